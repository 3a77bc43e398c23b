#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "protoform/data.hpp"
#include "protoform/errors.hpp"

using namespace protoform;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

double record_norm(const EmbeddingRecord& rec) {
    double n2 = 0.0;
    for (float v : rec.features) n2 += static_cast<double>(v) * v;
    return std::sqrt(n2);
}

// Spearman rank correlation; average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    auto ranks = [n](const std::vector<double>& v) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * (i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

}  // namespace

TEST_CASE("generation is deterministic from the seed") {
    SyntheticSpec spec;
    spec.kind = SyntheticKind::HypersphericalVmf;
    spec.num_classes = 4;
    spec.per_class = 25;
    spec.d_in = 8;
    spec.norm_min = 0.5;
    spec.norm_max = 2.0;
    spec.seed = 42;
    const auto a = generate(spec);
    const auto b = generate(spec);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train.records[i].label == b.train.records[i].label);
        CHECK(a.train.records[i].features == b.train.records[i].features);
    }
    spec.seed = 43;
    const auto c = generate(spec);
    CHECK(c.train.records[0].features != a.train.records[0].features);
}

TEST_CASE("splits are class-stratified and disjoint") {
    SyntheticSpec spec;
    spec.kind = SyntheticKind::EuclideanBlobs;
    spec.num_classes = 5;
    spec.per_class = 37;  // 20% of 37 = 7.4 -> 7 test samples, within one
    spec.d_in = 6;
    spec.seed = 7;
    const auto splits = generate(spec);

    std::vector<std::size_t> train_counts(5, 0), test_counts(5, 0);
    for (const auto& r : splits.train.records) ++train_counts[r.label];
    for (const auto& r : splits.test.records) ++test_counts[r.label];
    for (std::size_t c = 0; c < 5; ++c) {
        CHECK(train_counts[c] + test_counts[c] == 37);
        CHECK(std::abs(static_cast<double>(test_counts[c]) - 0.2 * 37.0) <= 1.0);
    }

    // records are continuous draws, so identical feature blobs across splits
    // would mean a leaked record
    std::set<std::vector<float>> train_set;
    for (const auto& r : splits.train.records) train_set.insert(r.features);
    for (const auto& r : splits.test.records) CHECK(train_set.count(r.features) == 0);
}

TEST_CASE("hypersphere: record norm is independent of the class") {
    SyntheticSpec spec;
    spec.kind = SyntheticKind::HypersphericalVmf;
    spec.num_classes = 10;
    spec.per_class = 125;  // 1000 train records
    spec.d_in = 16;
    spec.norm_min = 0.5;
    spec.norm_max = 2.0;
    spec.seed = 3;
    const auto splits = generate(spec);

    std::vector<double> norms, labels;
    for (const auto& r : splits.train.records) {
        norms.push_back(record_norm(r));
        labels.push_back(static_cast<double>(r.label));
    }
    REQUIRE(norms.size() == 1000);
    CHECK(std::abs(spearman(norms, labels)) < 0.1);

    const auto [lo, hi] = std::minmax_element(norms.begin(), norms.end());
    CHECK(*lo >= 0.5 - 1e-5);
    CHECK(*hi <= 2.0 + 1e-5);
}

TEST_CASE("hypersphere: orthogonal anchors keep class means separated") {
    SyntheticSpec spec;
    spec.kind = SyntheticKind::HypersphericalVmf;
    spec.num_classes = 5;
    spec.per_class = 100;
    spec.d_in = 16;
    spec.kappa_gen = 20.0;
    spec.seed = 11;
    const auto splits = generate(spec);

    std::vector<Vec> means(5, Vec(16, 0.0));
    std::vector<std::size_t> counts(5, 0);
    for (const auto& r : splits.train.records) {
        for (std::size_t i = 0; i < 16; ++i) means[r.label][i] += r.features[i];
        ++counts[r.label];
    }
    for (std::size_t c = 0; c < 5; ++c) {
        for (auto& v : means[c]) v /= static_cast<double>(counts[c]);
    }
    for (std::size_t a = 0; a < 5; ++a) {
        for (std::size_t b = a + 1; b < 5; ++b) {
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (std::size_t i = 0; i < 16; ++i) {
                dot += means[a][i] * means[b][i];
                na += means[a][i] * means[a][i];
                nb += means[b][i] * means[b][i];
            }
            CHECK(std::abs(dot) / std::sqrt(na * nb) < 0.5);
        }
    }
}

TEST_CASE("two classes with huge concentration become antipodal points") {
    SyntheticSpec spec;
    spec.kind = SyntheticKind::HypersphericalVmf;
    spec.num_classes = 2;
    spec.per_class = 30;
    spec.d_in = 8;
    spec.kappa_gen = 1e12;
    spec.norm_min = spec.norm_max = 1.0;
    spec.seed = 4;
    const auto splits = generate(spec);

    Vec ref;
    for (const auto& r : splits.train.records) {
        Vec v(r.features.begin(), r.features.end());
        if (ref.empty() && r.label == 0) ref = v;
    }
    for (const auto& r : splits.train.records) {
        double dot = 0.0, nv = 0.0, nr = 0.0;
        for (std::size_t i = 0; i < 8; ++i) {
            dot += r.features[i] * ref[i];
            nv += r.features[i] * r.features[i];
            nr += ref[i] * ref[i];
        }
        const double c = dot / std::sqrt(nv * nr);
        if (r.label == 0) {
            CHECK(c > 0.999);
        } else {
            CHECK(c < -0.999);
        }
    }
}

TEST_CASE("PROTOEMB1 round trip is the identity") {
    SyntheticSpec spec;
    spec.kind = SyntheticKind::HypersphericalVmf;
    spec.num_classes = 3;
    spec.per_class = 10;
    spec.d_in = 5;
    spec.zeta_w = 2;
    spec.zeta_h = 2;
    spec.norm_min = 0.25;
    spec.norm_max = 3.0;
    spec.seed = 9;
    const auto splits = generate(spec);

    const auto path = temp_path("protoform_roundtrip.emb");
    save_embeddings(splits.train, path);
    const auto loaded = load_embeddings(path);

    CHECK(loaded.num_classes == splits.train.num_classes);
    CHECK(loaded.zeta_w == 2);
    CHECK(loaded.zeta_h == 2);
    CHECK(loaded.d_in == 5);
    REQUIRE(loaded.size() == splits.train.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded.records[i].label == splits.train.records[i].label);
        CHECK(loaded.records[i].features == splits.train.records[i].features);
    }
}

TEST_CASE("embedding loader reports malformed files with offsets") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.per_class = 5;
    spec.d_in = 3;
    spec.seed = 1;
    const auto splits = generate(spec);
    const auto path = temp_path("protoform_bad.emb");
    save_embeddings(splits.train, path);

    // corrupted magic
    {
        std::FILE* f = std::fopen(path.c_str(), "r+b");
        std::fputc('Z', f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_embeddings(path), FormatError);

    // truncated record payload
    save_embeddings(splits.train, path);
    const auto full_size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full_size - 5);
    try {
        load_embeddings(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.byte_offset > 0);
        CHECK(e.byte_offset <= full_size);
    }

    // header says zero records
    {
        save_embeddings(splits.train, path);
        std::FILE* f = std::fopen(path.c_str(), "r+b");
        std::fseek(f, 9, SEEK_SET);
        const unsigned char zeros[4] = {0, 0, 0, 0};
        std::fwrite(zeros, 1, 4, f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_embeddings(path), FormatError);

    // label out of range
    {
        save_embeddings(splits.train, path);
        std::FILE* f = std::fopen(path.c_str(), "r+b");
        std::fseek(f, 9 + 20, SEEK_SET);  // first record label
        const unsigned char big[4] = {0xff, 0, 0, 0};
        std::fwrite(big, 1, 4, f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_embeddings(path), FormatError);

    CHECK_THROWS_AS(load_embeddings(temp_path("does_not_exist.emb")), FormatError);
}

TEST_CASE("save overwrites by truncating") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.per_class = 8;
    spec.d_in = 2;
    spec.seed = 2;
    const auto big = generate(spec);
    spec.per_class = 3;
    const auto small = generate(spec);

    const auto path = temp_path("protoform_overwrite.emb");
    save_embeddings(big.train, path);
    save_embeddings(small.train, path);
    const auto loaded = load_embeddings(path);
    CHECK(loaded.size() == small.train.size());
}

TEST_CASE("stats csv lists per-split class counts") {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.per_class = 10;
    spec.d_in = 2;
    spec.seed = 6;
    const auto splits = generate(spec);
    const auto path = temp_path("protoform_stats.csv");
    write_stats_csv(splits, path);

    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "split,class,count");
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == 6);
}
