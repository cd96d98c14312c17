#ifndef D2G_PAIRGEN_PAIRGEN_HPP
#define D2G_PAIRGEN_PAIRGEN_HPP

#include <filesystem>
#include <fstream>
#include <thread>

#include "d2g/core/errors.hpp"
#include "d2g/teacher/teacher.hpp"

namespace d2g {

// Noise -> ODE-solution pair datasets.
//
// Shard layout (all little-endian):
//   magic "D2G-PAIR", u32 version, u64 count, u16 dims[3] (c,h,w),
//   u8 solver_id (bit 7 marks a rewired shard), u16 steps, f32 guidance,
//   32-byte teacher hash, then count records of
//   { u64 record_seed, u32 cond, z payload f32, x payload f32 }.
//
// Record i's noise is drawn from the stream opened by hash_seed(base_seed, i),
// so shards are byte-identical for any worker count.

enum class SolverId : uint8_t { ddim = 0, heun = 1 };
inline constexpr uint8_t kRewiredBit = 0x80;
inline constexpr uint32_t kShardVersion = 1;
inline constexpr const char* kShardMagic = "D2G-PAIR";

struct PairRecord {
    uint64_t record_seed = 0;
    uint32_t cond = 0;
    Tensor z, x;  // (1,c,h,w), values f32-exact
};

struct ShardHeader {
    uint32_t version = kShardVersion;
    uint64_t count = 0;
    uint16_t dims[3] = {0, 0, 0};  // c,h,w
    SolverId solver = SolverId::ddim;
    bool rewired = false;
    uint16_t steps = 0;
    float guidance = 1.0f;
    Digest teacher_hash{};
};

struct PairShard {
    ShardHeader header;
    std::vector<PairRecord> records;
};

struct SolverConfig {
    SolverId solver = SolverId::ddim;
    int steps = 8;
    double guidance = 1.0;
};

struct PairGenConfig {
    SolverConfig solver;
    uint64_t base_seed = 0;
    int workers = 1;
    int shard_size = 4096;
    std::vector<int> cond_list;  // empty: uniform over teacher conditions
};

/*---------------------------------- shard io --------------------------------*/

namespace detail {

template <class T>
void put(std::vector<uint8_t>& out, const T& v) {
    const uint8_t* p = reinterpret_cast<const uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <class T>
T take(const std::vector<uint8_t>& in, size_t& off) {
    if (off + sizeof(T) > in.size()) throw CorruptShardError("shard truncated");
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace detail

inline void write_shard(const std::filesystem::path& path, const PairShard& shard) {
    const auto& h = shard.header;
    if (h.count != shard.records.size()) {
        throw std::invalid_argument("write_shard: header count mismatch");
    }
    std::vector<uint8_t> blob;
    blob.insert(blob.end(), kShardMagic, kShardMagic + 8);
    detail::put(blob, h.version);
    detail::put(blob, h.count);
    detail::put(blob, h.dims[0]);
    detail::put(blob, h.dims[1]);
    detail::put(blob, h.dims[2]);
    uint8_t solver_id = static_cast<uint8_t>(h.solver) | (h.rewired ? kRewiredBit : 0);
    detail::put(blob, solver_id);
    detail::put(blob, h.steps);
    detail::put(blob, h.guidance);
    blob.insert(blob.end(), h.teacher_hash.begin(), h.teacher_hash.end());
    for (const auto& r : shard.records) {
        detail::put(blob, r.record_seed);
        detail::put(blob, r.cond);
        for (const Tensor* t : {&r.z, &r.x}) {
            auto f = t->to_f32();
            const uint8_t* p = reinterpret_cast<const uint8_t*>(f.data());
            blob.insert(blob.end(), p, p + f.size() * sizeof(float));
        }
    }
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + tmp.string());
        f.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    }
    std::filesystem::rename(tmp, path);
}

inline PairShard read_shard(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DependencyError("missing shard", path.string());
    std::vector<uint8_t> blob((std::istreambuf_iterator<char>(f)),
                              std::istreambuf_iterator<char>());
    if (blob.size() < 8 || std::memcmp(blob.data(), kShardMagic, 8) != 0) {
        throw CorruptShardError("bad shard magic: " + path.string());
    }
    size_t off = 8;
    PairShard shard;
    auto& h = shard.header;
    h.version = detail::take<uint32_t>(blob, off);
    if (h.version != kShardVersion) throw CorruptShardError("unsupported shard version");
    h.count = detail::take<uint64_t>(blob, off);
    h.dims[0] = detail::take<uint16_t>(blob, off);
    h.dims[1] = detail::take<uint16_t>(blob, off);
    h.dims[2] = detail::take<uint16_t>(blob, off);
    uint8_t solver_id = detail::take<uint8_t>(blob, off);
    h.solver = static_cast<SolverId>(solver_id & 0x7F);
    h.rewired = (solver_id & kRewiredBit) != 0;
    h.steps = detail::take<uint16_t>(blob, off);
    h.guidance = detail::take<float>(blob, off);
    if (off + 32 > blob.size()) throw CorruptShardError("shard truncated");
    std::memcpy(h.teacher_hash.data(), blob.data() + off, 32);
    off += 32;

    const size_t per = static_cast<size_t>(h.dims[0]) * h.dims[1] * h.dims[2];
    const size_t rec_bytes = 8 + 4 + 2 * per * sizeof(float);
    if (blob.size() - off != h.count * rec_bytes) {
        throw CorruptShardError("shard record payload size mismatch: " + path.string());
    }
    shard.records.resize(h.count);
    for (auto& r : shard.records) {
        r.record_seed = detail::take<uint64_t>(blob, off);
        r.cond = detail::take<uint32_t>(blob, off);
        r.z = Tensor(1, h.dims[0], h.dims[1], h.dims[2]);
        r.x = Tensor(1, h.dims[0], h.dims[1], h.dims[2]);
        r.z.from_f32(reinterpret_cast<const float*>(blob.data() + off));
        off += per * sizeof(float);
        r.x.from_f32(reinterpret_cast<const float*>(blob.data() + off));
        off += per * sizeof(float);
    }
    return shard;
}

/*--------------------------------- generation -------------------------------*/

namespace detail {

inline Tensor solve_pairs(const TeacherModel& teacher, const Tensor& z,
                          const std::vector<int>& cond, const SolverConfig& sc) {
    Tensor x = sc.solver == SolverId::ddim
                   ? ddim_solve(teacher, z, cond, sc.steps, sc.guidance)
                   : heun_solve(teacher, z, cond, sc.steps);
    x.round_f32_();
    return x;
}

}  // namespace detail

// draw (cond, z) for record index i; z is rounded to f32 before solving so a
// stored shard can be re-verified bitwise
inline PairRecord draw_pair_input(uint64_t base_seed, uint64_t index, int cond_arity,
                                  const std::vector<int>& cond_list, int c, int h, int w) {
    PairRecord r;
    r.record_seed = hash_seed(base_seed, index);
    Rng rng(r.record_seed);
    if (cond_list.empty()) {
        r.cond = static_cast<uint32_t>(rng.next_u64() % static_cast<uint64_t>(cond_arity));
    } else {
        rng.next_u64();  // keep stream layout identical in both modes
        r.cond = static_cast<uint32_t>(cond_list[index % cond_list.size()]);
    }
    r.z = Tensor(1, c, h, w);
    rng.fill_gaussian(r.z);
    r.z.round_f32_();
    return r;
}

inline std::vector<PairShard> generate_pairs(const TeacherModel& teacher, int count,
                                             const PairGenConfig& cfg, int latent_c,
                                             int latent_h, int latent_w) {
    if (count < 1) throw std::invalid_argument("generate_pairs: count must be >= 1");
    if (cfg.solver.steps < 1 || cfg.solver.steps > teacher.schedule.T) {
        throw std::invalid_argument("generate_pairs: solver steps out of range");
    }
    if (cfg.solver.solver == SolverId::heun && teacher.schedule.kind != ScheduleKind::edm) {
        throw std::invalid_argument("generate_pairs: heun solver requires an edm teacher");
    }
    for (int c : cfg.cond_list) {
        if (c < 0 || c >= teacher.condition_arity) {
            throw std::invalid_argument("generate_pairs: condition list entry out of range");
        }
    }

    std::vector<PairRecord> records(count);
    // fixed chunk size regardless of worker count; records land by index
    const int chunk = 8;
    const int n_chunks = (count + chunk - 1) / chunk;
    std::atomic<int> next_chunk{0};

    auto work = [&]() {
        for (;;) {
            int ci = next_chunk.fetch_add(1);
            if (ci >= n_chunks) return;
            const int lo = ci * chunk, hi = std::min(count, lo + chunk);
            const int n = hi - lo;
            Tensor zb(n, latent_c, latent_h, latent_w);
            std::vector<int> cond(n);
            for (int i = 0; i < n; ++i) {
                records[lo + i] = draw_pair_input(cfg.base_seed, lo + i, teacher.condition_arity,
                                                  cfg.cond_list, latent_c, latent_h, latent_w);
                std::memcpy(zb.data() + static_cast<size_t>(i) * records[lo + i].z.size(),
                            records[lo + i].z.data(), records[lo + i].z.bytes());
                cond[i] = static_cast<int>(records[lo + i].cond);
            }
            Tensor xb = detail::solve_pairs(teacher, zb, cond, cfg.solver);
            const size_t per = static_cast<size_t>(latent_c) * latent_h * latent_w;
            for (int i = 0; i < n; ++i) {
                records[lo + i].x = Tensor(1, latent_c, latent_h, latent_w);
                std::memcpy(records[lo + i].x.data(), xb.data() + per * i, per * sizeof(double));
            }
        }
    };
    const int workers = std::max(1, cfg.workers);
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < workers; ++i) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }

    std::vector<PairShard> shards;
    for (int lo = 0; lo < count; lo += cfg.shard_size) {
        const int hi = std::min(count, lo + cfg.shard_size);
        PairShard s;
        s.header.count = static_cast<uint64_t>(hi - lo);
        s.header.dims[0] = static_cast<uint16_t>(latent_c);
        s.header.dims[1] = static_cast<uint16_t>(latent_h);
        s.header.dims[2] = static_cast<uint16_t>(latent_w);
        s.header.solver = cfg.solver.solver;
        s.header.steps = static_cast<uint16_t>(cfg.solver.steps);
        s.header.guidance = static_cast<float>(cfg.solver.guidance);
        s.header.teacher_hash = teacher.weights_hash;
        s.records.assign(std::make_move_iterator(records.begin() + lo),
                         std::make_move_iterator(records.begin() + hi));
        shards.push_back(std::move(s));
    }
    return shards;
}

inline std::vector<std::filesystem::path> write_shards(const std::filesystem::path& dir,
                                                       const std::vector<PairShard>& shards) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> paths;
    for (size_t i = 0; i < shards.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "pairs-%05zu.d2gp", i);
        paths.push_back(dir / name);
        write_shard(paths.back(), shards[i]);
    }
    return paths;
}

inline std::vector<PairShard> read_shards(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> paths;
    if (!std::filesystem::exists(dir)) throw DependencyError("missing pair directory", dir.string());
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.path().extension() == ".d2gp") paths.push_back(e.path());
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw DependencyError("no shards in directory", dir.string());
    std::vector<PairShard> shards;
    for (const auto& p : paths) shards.push_back(read_shard(p));
    return shards;
}

/*-------------------------------- verification ------------------------------*/

// re-derive z from the record seed and re-run the solver on K sampled records
inline void verify_shard(const PairShard& shard, const TeacherModel& teacher, int k = 16) {
    if (shard.header.rewired) {
        throw std::invalid_argument("verify_shard: rewired shards are not solver-consistent");
    }
    if (!std::equal(shard.header.teacher_hash.begin(), shard.header.teacher_hash.end(),
                    teacher.weights_hash.begin())) {
        throw std::invalid_argument("verify_shard: teacher hash mismatch");
    }
    SolverConfig sc{shard.header.solver, shard.header.steps, shard.header.guidance};
    uint64_t pick_seed = 0;
    std::memcpy(&pick_seed, shard.header.teacher_hash.data(), 8);
    Rng rng(pick_seed ^ shard.header.count);
    const int n = static_cast<int>(shard.header.count);
    for (int i = 0; i < std::min(k, n); ++i) {
        const auto& r = shard.records[rng.next_u64() % n];
        Rng stream(r.record_seed);
        stream.next_u64();  // condition draw
        Tensor z(1, shard.header.dims[0], shard.header.dims[1], shard.header.dims[2]);
        stream.fill_gaussian(z);
        z.round_f32_();
        if (z.to_f32() != r.z.to_f32()) throw CorruptShardError("verify: z not reproducible");
        Tensor x = detail::solve_pairs(teacher, z, {static_cast<int>(r.cond)}, sc);
        if (x.to_f32() != r.x.to_f32()) throw CorruptShardError("verify: x does not re-solve");
    }
}

/*---------------------------------- rewiring --------------------------------*/

// uniform random re-pairing of z and x multisets; marks the shard rewired
inline PairShard rewire_pairs(const PairShard& shard, uint64_t seed) {
    if (shard.records.size() < 2) {
        throw std::invalid_argument("rewire_pairs: need at least 2 records");
    }
    PairShard out = shard;
    Rng rng(hash_seed(seed, 0x5E));
    auto perm = rng.permutation(static_cast<uint32_t>(shard.records.size()));
    for (size_t i = 0; i < shard.records.size(); ++i) {
        out.records[i].x = shard.records[perm[i]].x;
    }
    out.header.rewired = true;
    return out;
}

}  // namespace d2g

#endif
