#ifndef D2G_EVALSUITE_METRICS_HPP
#define D2G_EVALSUITE_METRICS_HPP

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <functional>

#include "d2g/perceptual/distance.hpp"
#include "d2g/teacher/teacher.hpp"

namespace d2g {

/*-------------------------------- feature stats ------------------------------*/

struct FeatureStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    int count = 0;

    int dim() const { return static_cast<int>(mean.size()); }
};

// Gaussian fit with optional ridge shrinkage for small sample counts.
inline FeatureStats feature_stats(const std::vector<std::vector<double>>& rows,
                                  double shrink = 0.0) {
    if (rows.size() < 2) throw std::invalid_argument("feature_stats: need at least 2 samples");
    const int n = static_cast<int>(rows.size());
    const int d = static_cast<int>(rows[0].size());
    FeatureStats st;
    st.count = n;
    st.mean = Eigen::VectorXd::Zero(d);
    for (const auto& r : rows)
        st.mean += Eigen::Map<const Eigen::VectorXd>(r.data(), d);
    st.mean /= n;
    st.cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto& r : rows) {
        Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(r.data(), d) - st.mean;
        st.cov.noalias() += c * c.transpose();
    }
    st.cov /= std::max(1, n - 1);
    if (shrink > 0) st.cov.diagonal().array() += shrink;
    return st;
}

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)), matrix root by symmetric
// eigendecomposition with negative eigenvalues clamped at zero
inline double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
    if (a.dim() != b.dim()) throw std::invalid_argument("frechet_distance: dim mismatch");

    auto psd_sqrt = [](const Eigen::MatrixXd& m) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
        Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        return Eigen::MatrixXd(es.eigenvectors() * ev.asDiagonal() *
                               es.eigenvectors().transpose());
    };

    const Eigen::MatrixXd sa_root = psd_sqrt(a.cov);
    const Eigen::MatrixXd inner = sa_root * b.cov * sa_root;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()));
    const double tr_root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    const double mean_term = (a.mean - b.mean).squaredNorm();
    const double trace_term = a.cov.trace() + b.cov.trace() - 2.0 * tr_root;
    return std::max(0.0, mean_term + trace_term);
}

/*---------------------------------- fid proxy --------------------------------*/

inline std::vector<std::vector<double>> extract_features(const FeatureBackbone& bb,
                                                         const std::vector<Tensor>& items,
                                                         int chunk = 32) {
    std::vector<std::vector<double>> rows;
    rows.reserve(items.size());
    for (size_t lo = 0; lo < items.size(); lo += chunk) {
        const size_t hi = std::min(items.size(), lo + chunk);
        const Tensor& t0 = items[lo];
        Tensor batch(static_cast<int>(hi - lo), t0.c(), t0.h(), t0.w());
        for (size_t i = lo; i < hi; ++i) {
            std::memcpy(batch.data() + (i - lo) * t0.size(), items[i].data(), t0.bytes());
        }
        Tensor f = bb.pooled_features(batch);
        for (int i = 0; i < f.n(); ++i) {
            rows.emplace_back(f.data() + static_cast<size_t>(i) * f.c(),
                              f.data() + static_cast<size_t>(i + 1) * f.c());
        }
    }
    return rows;
}

inline constexpr double kDefaultShrink = 1e-3;

inline double fid_proxy(const FeatureBackbone& bb, const std::vector<Tensor>& real,
                        const std::vector<Tensor>& fake, double shrink = kDefaultShrink) {
    const size_t need = 2 * static_cast<size_t>(bb.feature_dim());
    if (shrink <= 0 && (real.size() < need || fake.size() < need)) {
        throw std::invalid_argument("fid_proxy: undersized sets without shrinkage");
    }
    auto fr = extract_features(bb, real);
    auto ff = extract_features(bb, fake);
    return frechet_distance(feature_stats(fr, shrink), feature_stats(ff, shrink));
}

/*------------------------------ precision / recall ---------------------------*/

// k-NN manifold estimate: precision is the fraction of fake points inside the
// union of real k-NN balls; recall the symmetric quantity
inline std::pair<double, double> precision_recall(const std::vector<std::vector<double>>& real,
                                                  const std::vector<std::vector<double>>& fake,
                                                  int k) {
    if (k < 1 || k >= static_cast<int>(std::min(real.size(), fake.size()))) {
        throw std::invalid_argument("precision_recall: k out of range");
    }
    auto dist2 = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0;
        for (size_t i = 0; i < a.size(); ++i) {
            double d = a[i] - b[i];
            s += d * d;
        }
        return s;
    };
    auto knn_radii = [&](const std::vector<std::vector<double>>& pts) {
        std::vector<double> radii(pts.size());
        std::vector<double> d(pts.size());
        for (size_t i = 0; i < pts.size(); ++i) {
            for (size_t j = 0; j < pts.size(); ++j) d[j] = dist2(pts[i], pts[j]);
            std::nth_element(d.begin(), d.begin() + k, d.end());  // d[i][i]=0 occupies rank 0
            radii[i] = d[k];
        }
        return radii;
    };
    auto covered = [&](const std::vector<std::vector<double>>& pts,
                       const std::vector<std::vector<double>>& manifold,
                       const std::vector<double>& radii) {
        int inside = 0;
        for (const auto& p : pts) {
            for (size_t j = 0; j < manifold.size(); ++j) {
                if (dist2(p, manifold[j]) <= radii[j]) {
                    ++inside;
                    break;
                }
            }
        }
        return static_cast<double>(inside) / pts.size();
    };
    auto rr = knn_radii(real);
    auto fr = knn_radii(fake);
    return {covered(fake, real, rr), covered(real, fake, fr)};
}

/*--------------------------------- alignment ---------------------------------*/

// condition-classifier agreement; the toy stand-in for a text-image score
inline double alignment_score(const FeatureBackbone& classifier,
                              const std::vector<Tensor>& generated,
                              const std::vector<int>& conds, int chunk = 32) {
    if (generated.size() != conds.size()) {
        throw std::invalid_argument("alignment_score: size mismatch");
    }
    if (generated.empty()) return 0.0;
    int agree = 0;
    for (size_t lo = 0; lo < generated.size(); lo += chunk) {
        const size_t hi = std::min(generated.size(), lo + chunk);
        const Tensor& t0 = generated[lo];
        Tensor batch(static_cast<int>(hi - lo), t0.c(), t0.h(), t0.w());
        for (size_t i = lo; i < hi; ++i) {
            std::memcpy(batch.data() + (i - lo) * t0.size(), generated[i].data(), t0.bytes());
        }
        auto pred = classifier.predict(batch);
        for (size_t i = lo; i < hi; ++i) {
            if (pred[i - lo] == conds[i]) ++agree;
        }
    }
    return static_cast<double>(agree) / generated.size();
}

/*---------------------------- diversity / fidelity ---------------------------*/

using GenerateFn = std::function<Tensor(const Tensor& z, int cond)>;

// mean pairwise perceptual distance across seeded draws at a fixed condition
inline double diversity_score(const GenerateFn& gen, int cond, int n,
                              const CalibratedDistance& dist, int latent_c, int latent_h,
                              int latent_w, uint64_t seed) {
    if (n < 2) throw std::invalid_argument("diversity_score: n must be >= 2");
    std::vector<Tensor> samples;
    samples.reserve(n);
    for (int i = 0; i < n; ++i) {
        Rng rng(hash_seed(seed, i));
        samples.push_back(gen(rng.gaussian(1, latent_c, latent_h, latent_w), cond));
    }
    double total = 0;
    int pairs = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j, ++pairs) total += dist(samples[i], samples[j]);
    return total / std::max(1, pairs);
}

// mean perceptual distance between the generator output and the teacher's ODE
// endpoint from the same noise; 0 means the mapping is preserved
inline double trajectory_fidelity(const GenerateFn& gen, const TeacherModel& teacher,
                                  const std::vector<int>& conds, int n,
                                  const CalibratedDistance& dist, int solver_steps,
                                  double guidance, int latent_c, int latent_h, int latent_w,
                                  uint64_t seed) {
    if (n < 1) throw std::invalid_argument("trajectory_fidelity: n must be >= 1");
    double total = 0;
    for (int i = 0; i < n; ++i) {
        Rng rng(hash_seed(seed, 0x7F00 + i));
        Tensor z = rng.gaussian(1, latent_c, latent_h, latent_w);
        int c = conds[i % conds.size()];
        Tensor a = gen(z, c);
        Tensor b = ddim_solve(teacher, z, c, solver_steps, guidance);
        total += dist(a, b);
    }
    return total / n;
}

/*--------------------------------- report ------------------------------------*/

struct MetricReport {
    double frechet = 0;
    double precision = 0, recall = 0;
    double alignment = 0;
    double diversity = 0;
    double trajectory_fidelity = 0;
    int real_count = 0, fake_count = 0;

    json to_json() const {
        return {{"frechet", frechet},
                {"precision", precision},
                {"recall", recall},
                {"alignment", alignment},
                {"diversity", diversity},
                {"trajectory_fidelity", trajectory_fidelity},
                {"real_count", real_count},
                {"fake_count", fake_count}};
    }

    bool finite_and_bounded() const {
        auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
        return std::isfinite(frechet) && std::isfinite(diversity) &&
               std::isfinite(trajectory_fidelity) && in01(precision) && in01(recall) &&
               in01(alignment) && frechet >= 0 && diversity >= 0 && trajectory_fidelity >= 0;
    }
};

}  // namespace d2g

#endif
