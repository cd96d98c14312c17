#ifndef D2G_DATA_DATASET_HPP
#define D2G_DATA_DATASET_HPP

#include <vector>

#include "d2g/core/rng.hpp"
#include "d2g/core/tensor.hpp"

namespace d2g {

// A labeled set of same-shaped tensors (images or latents).
struct LabeledSet {
    std::vector<Tensor> items;
    std::vector<int> labels;

    size_t size() const { return items.size(); }
    bool empty() const { return items.empty(); }

    LabeledSet slice(size_t from, size_t to) const {
        LabeledSet out;
        for (size_t i = from; i < to && i < items.size(); ++i) {
            out.items.push_back(items[i]);
            out.labels.push_back(labels[i]);
        }
        return out;
    }

    // stack a subset into one batch tensor
    Tensor batch(const std::vector<size_t>& idx) const {
        const Tensor& t0 = items[idx[0]];
        Tensor out(static_cast<int>(idx.size()), t0.c(), t0.h(), t0.w());
        const size_t per = t0.size();
        for (size_t i = 0; i < idx.size(); ++i) {
            std::memcpy(out.data() + i * per, items[idx[i]].data(), per * sizeof(double));
        }
        return out;
    }
    std::vector<int> batch_labels(const std::vector<size_t>& idx) const {
        std::vector<int> out(idx.size());
        for (size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
        return out;
    }
};

// seeded epoch shuffling without replacement
class BatchSampler {
public:
    BatchSampler(size_t n, int batch, uint64_t seed) : n_(n), batch_(batch), rng_(seed) { reshuffle(); }

    std::vector<size_t> next() {
        std::vector<size_t> idx(batch_);
        for (int i = 0; i < batch_; ++i) {
            if (pos_ >= n_) reshuffle();
            idx[i] = order_[pos_++];
        }
        return idx;
    }

private:
    void reshuffle() {
        auto p = rng_.permutation(static_cast<uint32_t>(n_));
        order_.assign(p.begin(), p.end());
        pos_ = 0;
    }
    size_t n_, pos_ = 0;
    int batch_;
    Rng rng_;
    std::vector<size_t> order_;
};

}  // namespace d2g

#endif
