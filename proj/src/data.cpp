#include "protoform/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "protoform/errors.hpp"
#include "protoform/rng.hpp"

namespace protoform {

namespace {

constexpr char kEmbMagic[9] = {'P', 'R', 'O', 'T', 'O', 'E', 'M', 'B', '1'};

// Class anchor directions: antipodal for two classes, orthonormal when
// C <= D_in (gives well separated class means), random unit vectors
// otherwise.
std::vector<Vec> class_directions(std::uint32_t num_classes, std::uint32_t d_in, Rng& rng) {
    std::vector<Vec> dirs;
    dirs.reserve(num_classes);
    if (num_classes == 2) {
        dirs.push_back(rng.unit_vector(d_in));
        Vec opposite = dirs.front();
        for (auto& x : opposite) x = -x;
        dirs.push_back(std::move(opposite));
    } else if (num_classes <= d_in) {
        for (std::uint32_t c = 0; c < num_classes; ++c) {
            Vec v = rng.normal_vec(d_in);
            for (const auto& prev : dirs) {
                double proj = 0.0;
                for (std::uint32_t i = 0; i < d_in; ++i) proj += prev[i] * v[i];
                for (std::uint32_t i = 0; i < d_in; ++i) v[i] -= proj * prev[i];
            }
            double n2 = 0.0;
            for (double x : v) n2 += x * x;
            const double inv = 1.0 / std::sqrt(n2);
            for (auto& x : v) x *= inv;
            dirs.push_back(std::move(v));
        }
    } else {
        for (std::uint32_t c = 0; c < num_classes; ++c) dirs.push_back(rng.unit_vector(d_in));
    }
    return dirs;
}

void check_spec(const SyntheticSpec& spec) {
    if (spec.num_classes < 2) throw ConfigError("generate: need >= 2 classes");
    if (spec.per_class == 0 || spec.d_in == 0 || spec.zeta_w == 0 || spec.zeta_h == 0) {
        throw ConfigError("generate: zero-sized dimension");
    }
    if (!(spec.noise >= 0.0) || !(spec.kappa_gen > 0.0) || !(spec.center_spread > 0.0)) {
        throw ConfigError("generate: scales must be positive");
    }
    if (!(spec.norm_min > 0.0) || spec.norm_max < spec.norm_min) {
        throw ConfigError("generate: bad norm range");
    }
}

}  // namespace

DatasetSplits generate(const SyntheticSpec& spec) {
    check_spec(spec);
    Rng dir_rng = Rng::derive(spec.seed, 0x616e63686f72ULL);  // anchors
    Rng rec_rng = Rng::derive(spec.seed, 0x7265636f7264ULL);  // records
    Rng split_rng = Rng::derive(spec.seed, 0x73706c6974ULL);  // split

    const auto dirs = class_directions(spec.num_classes, spec.d_in, dir_rng);
    const std::size_t cells = static_cast<std::size_t>(spec.zeta_w) * spec.zeta_h;
    const double tangent_sigma = 1.0 / std::sqrt(spec.kappa_gen);

    EmbeddingDataset all;
    all.num_classes = spec.num_classes;
    all.zeta_w = spec.zeta_w;
    all.zeta_h = spec.zeta_h;
    all.d_in = spec.d_in;
    all.records.reserve(static_cast<std::size_t>(spec.num_classes) * spec.per_class);

    for (std::uint32_t c = 0; c < spec.num_classes; ++c) {
        const Vec& dir = dirs[c];
        for (std::uint32_t n = 0; n < spec.per_class; ++n) {
            EmbeddingRecord rec;
            rec.label = c;
            rec.features.resize(cells * spec.d_in);
            const double record_norm = rec_rng.uniform(spec.norm_min, spec.norm_max);
            for (std::size_t s = 0; s < cells; ++s) {
                float* out = rec.features.data() + s * spec.d_in;
                if (spec.kind == SyntheticKind::EuclideanBlobs) {
                    for (std::uint32_t i = 0; i < spec.d_in; ++i) {
                        const double v =
                            spec.center_spread * dir[i] + spec.noise * rec_rng.normal();
                        out[i] = static_cast<float>(v);
                    }
                } else {
                    // anchor + Gaussian tangent noise, normalized, then a
                    // class-independent record norm
                    Vec g = rec_rng.normal_vec(spec.d_in);
                    double gdot = 0.0;
                    for (std::uint32_t i = 0; i < spec.d_in; ++i) gdot += g[i] * dir[i];
                    Vec v(spec.d_in);
                    double n2 = 0.0;
                    for (std::uint32_t i = 0; i < spec.d_in; ++i) {
                        v[i] = dir[i] + tangent_sigma * (g[i] - gdot * dir[i]);
                        n2 += v[i] * v[i];
                    }
                    const double scale = record_norm / std::sqrt(n2);
                    for (std::uint32_t i = 0; i < spec.d_in; ++i) {
                        out[i] = static_cast<float>(v[i] * scale);
                    }
                }
            }
            all.records.push_back(std::move(rec));
        }
    }
    return split_dataset(all, split_rng.next_u64());
}

DatasetSplits split_dataset(const EmbeddingDataset& dataset, std::uint64_t seed) {
    if (dataset.records.empty()) throw ConfigError("split_dataset: empty dataset");
    DatasetSplits out;
    out.train.num_classes = out.test.num_classes = dataset.num_classes;
    out.train.zeta_w = out.test.zeta_w = dataset.zeta_w;
    out.train.zeta_h = out.test.zeta_h = dataset.zeta_h;
    out.train.d_in = out.test.d_in = dataset.d_in;
    out.train.split = "train";
    out.test.split = "test";

    Rng rng(seed);
    for (std::uint32_t c = 0; c < dataset.num_classes; ++c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < dataset.records.size(); ++i) {
            if (dataset.records[i].label == c) idx.push_back(i);
        }
        rng.shuffle(idx);
        const std::size_t test_n =
            static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(idx.size())));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto& dst = i < test_n ? out.test : out.train;
            dst.records.push_back(dataset.records[idx[i]]);
        }
    }
    if (out.train.records.empty()) throw ConfigError("split_dataset: empty train split");
    return out;
}

// ---------------------------------------------------------------------------
// PROTOEMB1 serialization

namespace {

template <typename T>
void put_le(std::string& buf, T value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes, bytes + sizeof(T));
    }
    buf.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(const std::string& data, std::size_t& pos, const char* what) {
    if (data.size() < pos + sizeof(T)) {
        throw FormatError(std::string("embeddings: truncated ") + what, pos);
    }
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, data.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes, bytes + sizeof(T));
    }
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    pos += sizeof(T);
    return value;
}

}  // namespace

void save_embeddings(const EmbeddingDataset& dataset, const std::string& path) {
    if (dataset.d_in == 0 || dataset.zeta_w == 0 || dataset.zeta_h == 0) {
        throw ConfigError("save_embeddings: zero-sized dimension");
    }
    const std::size_t per_record =
        static_cast<std::size_t>(dataset.zeta_w) * dataset.zeta_h * dataset.d_in;
    std::string buf;
    buf.append(kEmbMagic, sizeof(kEmbMagic));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(dataset.records.size()));
    put_le<std::uint32_t>(buf, dataset.num_classes);
    put_le<std::uint32_t>(buf, dataset.zeta_w);
    put_le<std::uint32_t>(buf, dataset.zeta_h);
    put_le<std::uint32_t>(buf, dataset.d_in);
    for (const auto& rec : dataset.records) {
        if (rec.features.size() != per_record) {
            throw ConfigError("save_embeddings: record feature size mismatch");
        }
        if (rec.label >= dataset.num_classes) {
            throw ConfigError("save_embeddings: label out of range");
        }
        put_le<std::uint32_t>(buf, rec.label);
        for (float v : rec.features) put_le<float>(buf, v);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("save_embeddings: cannot open " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw ConfigError("save_embeddings: write failed for " + path);
}

EmbeddingDataset load_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("embeddings: cannot open " + path, 0);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    if (data.size() < sizeof(kEmbMagic) ||
        std::memcmp(data.data(), kEmbMagic, sizeof(kEmbMagic)) != 0) {
        throw FormatError("embeddings: bad magic", 0);
    }
    pos = sizeof(kEmbMagic);
    EmbeddingDataset out;
    const auto n = get_le<std::uint32_t>(data, pos, "header");
    out.num_classes = get_le<std::uint32_t>(data, pos, "header");
    out.zeta_w = get_le<std::uint32_t>(data, pos, "header");
    out.zeta_h = get_le<std::uint32_t>(data, pos, "header");
    out.d_in = get_le<std::uint32_t>(data, pos, "header");
    if (n == 0) throw FormatError("embeddings: empty dataset (N = 0)", pos);
    if (out.num_classes == 0 || out.d_in == 0 || out.zeta_w == 0 || out.zeta_h == 0) {
        throw FormatError("embeddings: zero-sized header field", pos);
    }
    const std::size_t per_record =
        static_cast<std::size_t>(out.zeta_w) * out.zeta_h * out.d_in;
    out.records.resize(n);
    for (auto& rec : out.records) {
        const std::size_t label_pos = pos;
        rec.label = get_le<std::uint32_t>(data, pos, "record label");
        if (rec.label >= out.num_classes) {
            throw FormatError("embeddings: label " + std::to_string(rec.label) + " >= C " +
                                  std::to_string(out.num_classes),
                              label_pos);
        }
        rec.features.resize(per_record);
        for (auto& v : rec.features) v = get_le<float>(data, pos, "record features");
    }
    if (pos != data.size()) throw FormatError("embeddings: trailing bytes", pos);
    return out;
}

// ---------------------------------------------------------------------------
// Adapters

FeatureGrid to_feature_grid(const EmbeddingDataset& dataset, std::size_t index) {
    const auto& rec = dataset.records.at(index);
    FeatureGrid g;
    g.width = dataset.zeta_w;
    g.height = dataset.zeta_h;
    g.depth = dataset.d_in;
    g.values.assign(rec.features.begin(), rec.features.end());
    return g;
}

std::vector<FeatureGrid> to_feature_grids(const EmbeddingDataset& dataset) {
    std::vector<FeatureGrid> out;
    out.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) out.push_back(to_feature_grid(dataset, i));
    return out;
}

std::vector<int> dataset_labels(const EmbeddingDataset& dataset) {
    std::vector<int> out;
    out.reserve(dataset.size());
    for (const auto& rec : dataset.records) out.push_back(static_cast<int>(rec.label));
    return out;
}

void write_stats_csv(const DatasetSplits& splits, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot open " + path);
    out << "split,class,count\n";
    for (const auto* ds : {&splits.train, &splits.test}) {
        std::vector<std::size_t> counts(ds->num_classes, 0);
        for (const auto& rec : ds->records) ++counts[rec.label];
        for (std::uint32_t c = 0; c < ds->num_classes; ++c) {
            out << ds->split << ',' << c << ',' << counts[c] << '\n';
        }
    }
}

}  // namespace protoform
