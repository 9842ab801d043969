// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "milcascade/errors.hpp"

namespace milcascade {

/// Dense matrices are column-major doubles throughout the library.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Number of attention/classifier branches; labels are binary.
inline constexpr int kBranches = 2;

/// Instance features of one bag: one row per instance.
///
/// Immutable after construction. Values are held in double precision; the
/// on-disk representation is float32 (see write_feature_file).
class FeatureMatrix {
  public:
    /// Throws ShapeError on an empty shape and UserError on non-finite entries.
    explicit FeatureMatrix(Matrix values);

    Eigen::Index rows() const noexcept { return values_.rows(); }
    Eigen::Index cols() const noexcept { return values_.cols(); }
    const Matrix& values() const noexcept { return values_; }

    /// Copy of the selected rows, in the given order.
    FeatureMatrix select_rows(const std::vector<int>& rows) const;

    friend bool operator==(const FeatureMatrix& a, const FeatureMatrix& b) {
        return a.values_.rows() == b.values_.rows() && a.values_.cols() == b.values_.cols() &&
               a.values_ == b.values_;
    }

  private:
    Matrix values_;
};

/// One labelled bag with paired high- and low-resolution instance features.
class BagPair {
  public:
    /// Throws ShapeError if the two feature matrices disagree on instance count
    /// or the relevance vector has the wrong length, UserError on a bad label.
    BagPair(std::string id, FeatureMatrix hi, FeatureMatrix lo, int label,
            std::optional<std::vector<bool>> truth_relevance = std::nullopt);

    const std::string& id() const noexcept { return id_; }
    const FeatureMatrix& hi() const noexcept { return hi_; }
    const FeatureMatrix& lo() const noexcept { return lo_; }
    int label() const noexcept { return label_; }
    int instances() const noexcept { return static_cast<int>(hi_.rows()); }
    const std::optional<std::vector<bool>>& truth_relevance() const noexcept { return truth_; }

  private:
    std::string id_;
    FeatureMatrix hi_;
    FeatureMatrix lo_;
    int label_;
    std::optional<std::vector<bool>> truth_;
};

/// Per-instance, per-branch keep decisions.
///
/// `hard` holds the binarized decision and `soft` the value it was thresholded
/// from; the straight-through estimator routes gradients of `hard` to `soft`.
struct MaskMatrix {
    Matrix hard;  // N x 2, entries in {0, 1}
    Matrix soft;  // N x 2, entries in [0, 1]

    int instances() const noexcept { return static_cast<int>(hard.rows()); }
    /// Instance j is kept when either branch keeps it.
    bool kept(int j) const noexcept { return hard(j, 0) > 0.5 || hard(j, 1) > 0.5; }
    int kept_count() const noexcept;
    /// Fraction of instances kept by at least one branch.
    double union_fraction() const noexcept;
};

/// Threshold `soft` with strict inequality: hard = 1[soft > gamma].
MaskMatrix binarize(const Matrix& soft, double gamma);

struct SplitSpec {
    int fold_index = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> valid_ids;
    std::vector<std::string> test_ids;

    /// Throws UserError if an id appears twice or does not resolve to a bag.
    void validate(const std::vector<BagPair>& bags) const;
};

struct SplitFractions {
    double train = 0.8;
    double valid = 0.1;
    // remainder goes to test
};

/// Stratified Monte Carlo split: each fold reshuffles each class with a stream
/// derived from (seed, fold) and cuts it by `fractions`. Every partition gets at
/// least one bag of each class when the class has three or more bags.
SplitSpec monte_carlo_split(const std::vector<BagPair>& bags, int fold, std::uint64_t seed,
                            SplitFractions fractions = {});

/// Bags with the given ids, in id-list order.
std::vector<const BagPair*> select_bags(const std::vector<BagPair>& bags,
                                        const std::vector<std::string>& ids);

// --- feature file format -----------------------------------------------------
//
//   offset  size  field
//   0       4     magic "HDML"
//   4       2     format version (u16 LE)
//   6       4     rows (u32 LE)
//   10      4     cols (u32 LE)
//   14      4*r*c float32 LE payload, row-major

inline constexpr char kFeatureMagic[4] = {'H', 'D', 'M', 'L'};
inline constexpr std::uint16_t kFeatureFormatVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 14;

enum class FeatureFileErrc {
    kIo,
    kBadMagic,
    kVersionMismatch,
    kTruncated,
    kNonFinite,
};

const char* to_string(FeatureFileErrc code) noexcept;

class FeatureFileError : public UserError {
  public:
    FeatureFileError(FeatureFileErrc code, const std::string& what)
        : UserError(std::string(to_string(code)) + ": " + what), code_(code) {}

    FeatureFileErrc code() const noexcept { return code_; }

  private:
    FeatureFileErrc code_;
};

/// Values are narrowed to float32. Refuses to write non-finite values.
void write_feature_file(const FeatureMatrix& m, const std::filesystem::path& path);
FeatureMatrix read_feature_file(const std::filesystem::path& path);

// --- bag manifest ------------------------------------------------------------
//
// Tab-separated text with a header line:
//   id  label  hi_path  lo_path  relevance_path
// Paths are relative to the manifest's directory; relevance_path may be "-".
// A relevance file holds one 0/1 per line.

inline constexpr const char* kManifestFileName = "bags.tsv";

/// Writes feature/relevance files under `dir` plus `dir/bags.tsv`.
void write_dataset(const std::vector<BagPair>& bags, const std::filesystem::path& dir);

/// Accepts either a dataset directory or the manifest path itself.
std::vector<BagPair> read_dataset(const std::filesystem::path& dir_or_manifest);

}  // namespace milcascade
