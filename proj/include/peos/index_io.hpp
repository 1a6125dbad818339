#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "peos/error.hpp"
#include "peos/hnsw.hpp"
#include "peos/rng.hpp"

namespace peos {

inline constexpr char kIndexMagic[4] = {'P', 'E', 'O', 'S'};
inline constexpr std::uint32_t kIndexVersion = 1;

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Fingerprint of the stored (angular: normalised) vectors.
inline std::uint64_t dataset_fingerprint(const Dataset& ds) noexcept {
    const std::uint64_t hdr[2] = {ds.size(), ds.dim()};
    std::uint64_t h = fnv1a64({reinterpret_cast<const std::uint8_t*>(hdr), sizeof hdr});
    return fnv1a64({reinterpret_cast<const std::uint8_t*>(ds.data()), ds.values().size() * sizeof(float)}, h);
}

namespace detail {

class ByteWriter {
public:
    template <class T>
    void pod(const T& v) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void varint(std::uint64_t v) {
        while (v >= 0x80) {
            buf_.push_back(static_cast<std::uint8_t>(v | 0x80));
            v >>= 7;
        }
        buf_.push_back(static_cast<std::uint8_t>(v));
    }
    std::vector<std::uint8_t>& buffer() noexcept { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}

    template <class T>
    T pod() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, b_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void bytes(void* out, std::size_t n) {
        need(n);
        std::memcpy(out, b_.data() + pos_, n);
        pos_ += n;
    }
    std::uint64_t varint() {
        std::uint64_t v = 0;
        for (int shift = 0; shift < 64; shift += 7) {
            need(1);
            std::uint8_t c = b_[pos_++];
            v |= static_cast<std::uint64_t>(c & 0x7f) << shift;
            if (!(c & 0x80)) return v;
        }
        throw FormatError("index: malformed varint");
    }
    bool done() const noexcept { return pos_ == b_.size(); }

private:
    void need(std::size_t n) const {
        if (b_.size() - pos_ < n) throw FormatError("index: record runs past end of body");
    }
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Serialisation of HnswIndex. Vectors are not stored; loading takes the
/// base set and checks it against a fingerprint in the header.
///
/// Layout: "PEOS", u32 version, header, per-level delta-coded adjacency,
/// packed edge records of the base layer in adjacency order, u64 FNV-1a of
/// everything before it.
struct IndexIo {
    static std::vector<std::uint8_t> serialize(const HnswIndex& idx) {
        detail::ByteWriter w;
        w.bytes(kIndexMagic, 4);
        w.pod(kIndexVersion);
        const auto n = static_cast<std::uint32_t>(idx.size());
        w.pod(static_cast<std::uint8_t>(idx.metric_));
        w.pod(idx.dim());
        w.pod(n);
        w.pod(idx.params_.M);
        w.pod(idx.params_.efc);
        w.pod(idx.params_.seed);
        w.pod(idx.entry_);
        w.pod(static_cast<std::int32_t>(idx.max_level_));
        w.pod(dataset_fingerprint(idx.data_));

        const Router& r = idx.router_;
        const RoutingConfig& cfg = r.config();
        w.pod(static_cast<std::uint8_t>(cfg.mode));
        w.pod(cfg.eps);
        w.pod(cfg.L);
        w.pod(cfg.m);
        w.pod(static_cast<std::uint8_t>(cfg.compact));
        w.pod(cfg.simhash_bits);
        w.pod(r.seed());
        w.pod(kRngId);
        if (cfg.mode != RoutingMode::None) {
            for (const ScalarQuantizer* q : {&r.quantizers().half_u_sq, &r.quantizers().enorm}) {
                w.pod(q->min);
                w.pod(q->step);
                w.pod(q->bits);
            }
            const PermutationPlan& p = r.plan();
            w.pod(p.L);
            w.bytes(p.perm.data(), p.perm.size() * sizeof(std::uint32_t));
            w.bytes(p.subspace_of.data(), p.subspace_of.size() * sizeof(std::uint32_t));
        }

        w.bytes(idx.levels_.data(), idx.levels_.size());
        for (int lc = 0; lc <= idx.max_level_; ++lc)
            for (std::uint32_t v = 0; v < n; ++v) {
                if (idx.levels_[v] < lc) continue;
                auto nb = idx.neighbors(v, lc);
                w.varint(nb.size());
                std::uint32_t prev = 0;
                for (auto u : nb) {
                    w.varint(u - prev);
                    prev = u;
                }
            }

        const std::size_t rs = r.layout().size();
        if (rs > 0)
            for (std::uint32_t v = 0; v < n; ++v)
                for (std::uint32_t k = 0; k < idx.count0_[v]; ++k) w.bytes(idx.meta_record(v, k), rs);

        auto& buf = w.buffer();
        std::uint64_t h = fnv1a64(buf);
        w.pod(h);
        return std::move(buf);
    }

    static HnswIndex deserialize(std::span<const std::uint8_t> bytes, const Dataset& base) {
        if (bytes.size() < 16) throw FormatError("index: file too short");
        if (std::memcmp(bytes.data(), kIndexMagic, 4) != 0) throw FormatError("index: bad magic");
        std::uint32_t version;
        std::memcpy(&version, bytes.data() + 4, 4);
        if (version != kIndexVersion) throw FormatError("index: unsupported version " + std::to_string(version));
        std::uint64_t stored;
        std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
        if (fnv1a64(bytes.first(bytes.size() - 8)) != stored) throw CorruptionError("index: checksum mismatch");

        detail::ByteReader rd(bytes.subspan(8, bytes.size() - 16));
        HnswIndex idx;
        auto metric_raw = rd.pod<std::uint8_t>();
        if (metric_raw > 2) throw FormatError("index: unknown metric");
        idx.metric_ = static_cast<Metric>(metric_raw);
        const auto d = rd.pod<std::uint32_t>();
        const auto n = rd.pod<std::uint32_t>();
        idx.params_.M = rd.pod<std::uint32_t>();
        idx.params_.efc = rd.pod<std::uint32_t>();
        idx.params_.seed = rd.pod<std::uint64_t>();
        idx.entry_ = rd.pod<std::uint32_t>();
        idx.max_level_ = rd.pod<std::int32_t>();
        const auto fp = rd.pod<std::uint64_t>();

        if (base.dim() != d || base.size() != n) throw UsageError("index: base vectors do not match index shape");
        idx.data_ = idx.metric_ == Metric::Angular ? normalize_rows(base) : base;
        if (dataset_fingerprint(idx.data_) != fp) throw UsageError("index: base vectors do not match index fingerprint");
        if (idx.params_.M < 2 || idx.entry_ >= n || idx.max_level_ < 0 || idx.max_level_ > 255)
            throw FormatError("index: invalid graph header");

        RoutingConfig cfg;
        auto mode_raw = rd.pod<std::uint8_t>();
        if (mode_raw > 3) throw FormatError("index: unknown routing mode");
        cfg.mode = static_cast<RoutingMode>(mode_raw);
        cfg.eps = rd.pod<double>();
        cfg.L = rd.pod<std::uint32_t>();
        cfg.m = rd.pod<std::uint32_t>();
        cfg.compact = rd.pod<std::uint8_t>() != 0;
        cfg.simhash_bits = rd.pod<std::uint32_t>();
        const auto rseed = rd.pod<std::uint64_t>();
        if (rd.pod<std::uint32_t>() != kRngId) throw FormatError("index: generator id mismatch");
        if (cfg.mode != RoutingMode::None) {
            NormQuantizers quant;
            for (ScalarQuantizer* q : {&quant.half_u_sq, &quant.enorm}) {
                q->min = rd.pod<double>();
                q->step = rd.pod<double>();
                q->bits = rd.pod<std::uint32_t>();
            }
            PermutationPlan plan;
            plan.L = rd.pod<std::uint32_t>();
            plan.perm.resize(d);
            plan.subspace_of.resize(d);
            rd.bytes(plan.perm.data(), d * sizeof(std::uint32_t));
            rd.bytes(plan.subspace_of.data(), d * sizeof(std::uint32_t));
            try {
                idx.router_ = Router(cfg, idx.metric_, d, rseed, std::move(plan), quant);
            } catch (const UsageError& e) {
                throw FormatError(std::string("index: invalid routing header: ") + e.what());
            }
        } else {
            idx.router_ = Router(cfg, idx.metric_, d, rseed, PermutationPlan::identity(d, 1), {});
        }

        idx.levels_.resize(n);
        rd.bytes(idx.levels_.data(), n);
        idx.upper_.assign(n, {});
        for (std::uint32_t v = 0; v < n; ++v) {
            if (idx.levels_[v] > idx.max_level_) throw FormatError("index: node level above top level");
            idx.upper_[v].resize(idx.levels_[v]);
        }
        idx.links0_.assign(static_cast<std::size_t>(n) * idx.max_degree0(), 0);
        idx.count0_.assign(n, 0);
        for (int lc = 0; lc <= idx.max_level_; ++lc)
            for (std::uint32_t v = 0; v < n; ++v) {
                if (idx.levels_[v] < lc) continue;
                const auto cnt = rd.varint();
                if (cnt > idx.max_degree(lc)) throw FormatError("index: adjacency list too long");
                std::vector<std::uint32_t> list(cnt);
                std::uint64_t prev = 0;
                for (auto& u : list) {
                    prev += rd.varint();
                    if (prev >= n) throw FormatError("index: neighbour id out of range");
                    u = static_cast<std::uint32_t>(prev);
                }
                if (lc == 0) {
                    std::copy(list.begin(), list.end(), idx.links0_.begin() + static_cast<std::ptrdiff_t>(v) * idx.max_degree0());
                    idx.count0_[v] = static_cast<std::uint32_t>(cnt);
                } else {
                    idx.upper_[v][static_cast<std::size_t>(lc - 1)] = std::move(list);
                }
            }

        const std::size_t rs = idx.router_.layout().size();
        idx.meta_.assign(idx.links0_.size() * rs, 0);
        if (rs > 0)
            for (std::uint32_t v = 0; v < n; ++v)
                for (std::uint32_t k = 0; k < idx.count0_[v]; ++k)
                    rd.bytes(idx.meta_.data() + (static_cast<std::size_t>(v) * idx.max_degree0() + k) * rs, rs);
        if (!rd.done()) throw FormatError("index: trailing bytes before checksum");
        if (cfg.mode != RoutingMode::None) idx.mark_degenerate_edges();
        return idx;
    }
};

inline void save_index(const HnswIndex& idx, const std::string& path) {
    auto bytes = IndexIo::serialize(idx);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline HnswIndex load_index(const std::string& path, const Dataset& base) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return IndexIo::deserialize(bytes, base);
}

}  // namespace peos
