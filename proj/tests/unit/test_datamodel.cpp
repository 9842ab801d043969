// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include <gtest/gtest.h>

#include "milcascade/datamodel.hpp"
#include "support.hpp"

namespace milcascade {
namespace {

using testing::Gen;
using testing::TempDir;

std::vector<unsigned char> file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class T>
T read_le(const std::vector<unsigned char>& b, std::size_t at) {
    T v{};
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[at + i]) << (8 * i);
    return v;
}

FeatureFileErrc read_error(const std::filesystem::path& p) {
    try {
        read_feature_file(p);
    } catch (const FeatureFileError& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected a FeatureFileError";
    return FeatureFileErrc::kIo;
}

TEST(FeatureFile, SmallestMatrixIsEighteenBytes) {
    TempDir dir("ff");
    write_feature_file(FeatureMatrix(Matrix::Zero(1, 1)), dir / "m.bin");
    const auto b = file_bytes(dir / "m.bin");
    ASSERT_EQ(b.size(), 18u);
    EXPECT_EQ(std::memcmp(b.data(), "HDML", 4), 0);
    EXPECT_EQ(read_le<std::uint16_t>(b, 4), kFeatureFormatVersion);
}

TEST(FeatureFile, HeaderDeclaresShape) {
    TempDir dir("ff");
    Matrix m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    write_feature_file(FeatureMatrix(m), dir / "m.bin");
    const auto b = file_bytes(dir / "m.bin");
    ASSERT_EQ(b.size(), kFeatureHeaderBytes + 24);
    EXPECT_EQ(read_le<std::uint32_t>(b, 6), 2u);
    EXPECT_EQ(read_le<std::uint32_t>(b, 10), 3u);
    // Row-major payload: the second float is m(0, 1).
    float second;
    std::memcpy(&second, b.data() + kFeatureHeaderBytes + 4, 4);
    EXPECT_EQ(second, 2.0f);
}

TEST(FeatureFile, RoundTripReproducesBytes) {
    TempDir dir("ff");
    Gen g(11);
    const Matrix m = testing::normal_matrix(g, 100, 512).cast<float>().cast<double>();
    write_feature_file(FeatureMatrix(m), dir / "a.bin");
    const FeatureMatrix back = read_feature_file(dir / "a.bin");
    EXPECT_TRUE(back == FeatureMatrix(m));
    write_feature_file(back, dir / "b.bin");
    EXPECT_EQ(file_bytes(dir / "a.bin"), file_bytes(dir / "b.bin"));
}

TEST(FeatureFile, RoundTripPropertyOverRandomShapes) {
    TempDir dir("ff");
    Gen g(12);
    for (int trial = 0; trial < 25; ++trial) {
        const int rows = testing::uniform_int(g, 1, 40), cols = testing::uniform_int(g, 1, 40);
        const Matrix m = testing::normal_matrix(g, rows, cols, 100.0).cast<float>().cast<double>();
        write_feature_file(FeatureMatrix(m), dir / "m.bin");
        EXPECT_EQ(read_feature_file(dir / "m.bin").values(), m) << rows << "x" << cols;
    }
}

TEST(FeatureFile, DistinctErrorCodes) {
    TempDir dir("ff");
    Matrix m = Matrix::Ones(4, 4);
    write_feature_file(FeatureMatrix(m), dir / "good.bin");
    auto good = file_bytes(dir / "good.bin");
    auto put = [&](const std::string& name, const std::vector<unsigned char>& bytes) {
        std::ofstream out(dir / name, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        return dir / name;
    };

    auto bad_magic = good;
    std::memcpy(bad_magic.data(), "XXXX", 4);
    EXPECT_EQ(read_error(put("magic.bin", bad_magic)), FeatureFileErrc::kBadMagic);

    auto bad_version = good;
    bad_version[4] = 99;
    EXPECT_EQ(read_error(put("version.bin", bad_version)), FeatureFileErrc::kVersionMismatch);

    auto truncated = good;
    truncated.resize(truncated.size() - 6);
    EXPECT_EQ(read_error(put("trunc.bin", truncated)), FeatureFileErrc::kTruncated);

    auto nan_payload = good;
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(nan_payload.data() + kFeatureHeaderBytes, &nan, 4);
    EXPECT_EQ(read_error(put("nan.bin", nan_payload)), FeatureFileErrc::kNonFinite);

    EXPECT_EQ(read_error(dir / "missing.bin"), FeatureFileErrc::kIo);
}

TEST(FeatureMatrix, RejectsEmptyAndNonFinite) {
    EXPECT_THROW(FeatureMatrix(Matrix(0, 3)), ShapeError);
    Matrix m = Matrix::Zero(2, 2);
    m(1, 1) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(FeatureMatrix{m}, UserError);
}

TEST(BagPair, RejectsMismatchedRowsAndLabels) {
    const FeatureMatrix hi(Matrix::Zero(3, 4)), lo(Matrix::Zero(2, 2)), lo3(Matrix::Zero(3, 2));
    EXPECT_THROW(BagPair("b", hi, lo, 0), ShapeError);
    EXPECT_THROW(BagPair("b", hi, lo3, 2), UserError);
    EXPECT_THROW(BagPair("b", hi, lo3, 1, std::vector<bool>{true}), ShapeError);
    EXPECT_NO_THROW(BagPair("b", hi, lo3, 1, std::vector<bool>{true, false, true}));
}

TEST(MaskMatrix, ThresholdIsStrict) {
    Matrix soft(3, 2);
    soft << 0.5, 0.7, 0.3, 0.5000001, 0.0, 1.0;
    const MaskMatrix m = binarize(soft, 0.5);
    Matrix expected(3, 2);
    expected << 0, 1, 0, 1, 0, 1;
    EXPECT_EQ(m.hard, expected);
    EXPECT_EQ(m.kept_count(), 3);
    EXPECT_DOUBLE_EQ(m.union_fraction(), 1.0);
}

TEST(MaskMatrix, HardMatchesThresholdProperty) {
    Gen g(5);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix soft = testing::uniform_matrix(g, testing::uniform_int(g, 1, 30), 2, 0.0, 1.0);
        const double gamma = std::uniform_real_distribution<double>(0.01, 0.99)(g);
        const MaskMatrix m = binarize(soft, gamma);
        for (Eigen::Index i = 0; i < soft.size(); ++i) {
            EXPECT_EQ(m.hard.data()[i], soft.data()[i] > gamma ? 1.0 : 0.0);
        }
    }
}

std::vector<BagPair> labelled_bags(int n) {
    std::vector<BagPair> bags;
    for (int i = 0; i < n; ++i) {
        bags.emplace_back("bag" + std::to_string(i), FeatureMatrix(Matrix::Zero(2, 2)),
                          FeatureMatrix(Matrix::Zero(2, 1)), i % 3 == 0 ? 1 : 0);
    }
    return bags;
}

TEST(Split, PartitionsAreDisjointAndComplete) {
    Gen g(3);
    for (int trial = 0; trial < 30; ++trial) {
        const auto bags = labelled_bags(testing::uniform_int(g, 6, 80));
        const SplitSpec s = monte_carlo_split(bags, trial % 5, g());
        EXPECT_NO_THROW(s.validate(bags));
        std::set<std::string> seen;
        for (const auto* part : {&s.train_ids, &s.valid_ids, &s.test_ids})
            for (const auto& id : *part) EXPECT_TRUE(seen.insert(id).second) << id;
        EXPECT_EQ(seen.size(), bags.size());
    }
}

TEST(Split, StratifiedAndDeterministic) {
    const auto bags = labelled_bags(60);
    const SplitSpec a = monte_carlo_split(bags, 2, 99), b = monte_carlo_split(bags, 2, 99);
    EXPECT_EQ(a.train_ids, b.train_ids);
    EXPECT_EQ(a.test_ids, b.test_ids);
    const SplitSpec other = monte_carlo_split(bags, 3, 99);
    EXPECT_NE(a.train_ids, other.train_ids);
    for (const auto* part : {&a.train_ids, &a.valid_ids, &a.test_ids}) {
        int pos = 0;
        for (const auto* bag : select_bags(bags, *part)) pos += bag->label();
        EXPECT_GT(pos, 0);
        EXPECT_LT(pos, static_cast<int>(part->size()));
    }
}

TEST(Split, ValidateRejectsDuplicatesAndUnknownIds) {
    const auto bags = labelled_bags(6);
    SplitSpec s;
    s.train_ids = {"bag0", "bag1"};
    s.test_ids = {"bag1"};
    EXPECT_THROW(s.validate(bags), UserError);
    s.test_ids = {"nope"};
    EXPECT_THROW(s.validate(bags), UserError);
}

TEST(Dataset, ManifestRoundTrip) {
    TempDir dir("ds");
    Gen g(8);
    std::vector<BagPair> bags;
    for (int i = 0; i < 4; ++i) {
        const int n = testing::uniform_int(g, 2, 9);
        std::optional<std::vector<bool>> rel;
        if (i % 2 == 0) {
            rel.emplace(static_cast<std::size_t>(n));
            for (int j = 0; j < n; ++j) (*rel)[static_cast<std::size_t>(j)] = (j % 3 == 0);
        }
        bags.emplace_back("b" + std::to_string(i),
                          FeatureMatrix(testing::normal_matrix(g, n, 5).cast<float>().cast<double>()),
                          FeatureMatrix(testing::normal_matrix(g, n, 3).cast<float>().cast<double>()), i % 2, rel);
    }
    write_dataset(bags, dir.path());
    const auto back = read_dataset(dir / kManifestFileName);
    ASSERT_EQ(back.size(), bags.size());
    for (std::size_t i = 0; i < bags.size(); ++i) {
        EXPECT_EQ(back[i].id(), bags[i].id());
        EXPECT_EQ(back[i].label(), bags[i].label());
        EXPECT_TRUE(back[i].hi() == bags[i].hi());
        EXPECT_TRUE(back[i].lo() == bags[i].lo());
        EXPECT_EQ(back[i].truth_relevance(), bags[i].truth_relevance());
    }
}

TEST(Dataset, MissingManifestIsUserError) {
    TempDir dir("ds");
    EXPECT_THROW(read_dataset(dir.path()), UserError);
}

}  // namespace
}  // namespace milcascade
