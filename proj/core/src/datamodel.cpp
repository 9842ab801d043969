// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include "milcascade/datamodel.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "milcascade/rng.hpp"

namespace milcascade {

namespace fs = std::filesystem;

FeatureMatrix::FeatureMatrix(Matrix values) : values_(std::move(values)) {
    if (values_.rows() < 1 || values_.cols() < 1) {
        throw ShapeError("feature matrix must have at least one row and one column");
    }
    if (!values_.allFinite()) throw UserError("feature matrix contains non-finite values");
}

FeatureMatrix FeatureMatrix::select_rows(const std::vector<int>& rows) const {
    Matrix out(static_cast<Eigen::Index>(rows.size()), values_.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = values_.row(rows[i]);
    return FeatureMatrix(std::move(out));
}

BagPair::BagPair(std::string id, FeatureMatrix hi, FeatureMatrix lo, int label,
                 std::optional<std::vector<bool>> truth_relevance)
    : id_(std::move(id)), hi_(std::move(hi)), lo_(std::move(lo)), label_(label), truth_(std::move(truth_relevance)) {
    if (hi_.rows() != lo_.rows()) {
        throw ShapeError("bag '" + id_ + "': hi/lo instance counts differ (" + std::to_string(hi_.rows()) + " vs " +
                         std::to_string(lo_.rows()) + ")");
    }
    if (label_ != 0 && label_ != 1) throw UserError("bag '" + id_ + "': label must be 0 or 1");
    if (truth_ && static_cast<Eigen::Index>(truth_->size()) != hi_.rows()) {
        throw ShapeError("bag '" + id_ + "': relevance vector length does not match instance count");
    }
}

int MaskMatrix::kept_count() const noexcept {
    int n = 0;
    for (int j = 0; j < instances(); ++j) n += kept(j) ? 1 : 0;
    return n;
}

double MaskMatrix::union_fraction() const noexcept {
    return instances() == 0 ? 0.0 : static_cast<double>(kept_count()) / instances();
}

MaskMatrix binarize(const Matrix& soft, double gamma) {
    MaskMatrix m;
    m.soft = soft;
    m.hard = (soft.array() > gamma).cast<double>().matrix();
    return m;
}

void SplitSpec::validate(const std::vector<BagPair>& bags) const {
    std::set<std::string> known;
    for (const auto& b : bags) known.insert(b.id());
    std::set<std::string> seen;
    for (const auto* part : {&train_ids, &valid_ids, &test_ids}) {
        for (const auto& id : *part) {
            if (!known.count(id)) throw UserError("split references unknown bag '" + id + "'");
            if (!seen.insert(id).second) throw UserError("bag '" + id + "' appears in more than one partition");
        }
    }
}

SplitSpec monte_carlo_split(const std::vector<BagPair>& bags, int fold, std::uint64_t seed, SplitFractions fractions) {
    if (fractions.train <= 0.0 || fractions.valid < 0.0 || fractions.train + fractions.valid > 1.0) {
        throw UserError("invalid split fractions");
    }
    SplitSpec split;
    split.fold_index = fold;
    for (int cls = 0; cls < kBranches; ++cls) {
        std::vector<std::string> ids;
        for (const auto& b : bags)
            if (b.label() == cls) ids.push_back(b.id());
        std::sort(ids.begin(), ids.end());
        Rng rng = make_rng(seed, {0x5b117ULL, static_cast<std::uint64_t>(fold), static_cast<std::uint64_t>(cls)});
        std::shuffle(ids.begin(), ids.end(), rng);

        const int n = static_cast<int>(ids.size());
        int n_valid = static_cast<int>(std::lround(fractions.valid * n));
        int n_train = static_cast<int>(std::lround(fractions.train * n));
        const bool has_test = fractions.train + fractions.valid < 1.0;
        if (n >= 3) {
            n_valid = std::max(n_valid, fractions.valid > 0.0 ? 1 : 0);
            if (has_test) n_train = std::min(n_train, n - n_valid - 1);
        }
        n_train = std::clamp(n_train, 0, n);
        n_valid = std::clamp(n_valid, 0, n - n_train);
        if (!has_test) n_valid = n - n_train;

        split.train_ids.insert(split.train_ids.end(), ids.begin(), ids.begin() + n_train);
        split.valid_ids.insert(split.valid_ids.end(), ids.begin() + n_train, ids.begin() + n_train + n_valid);
        split.test_ids.insert(split.test_ids.end(), ids.begin() + n_train + n_valid, ids.end());
    }
    return split;
}

std::vector<const BagPair*> select_bags(const std::vector<BagPair>& bags, const std::vector<std::string>& ids) {
    std::map<std::string, const BagPair*> by_id;
    for (const auto& b : bags) by_id.emplace(b.id(), &b);
    std::vector<const BagPair*> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw UserError("unknown bag id '" + id + "'");
        out.push_back(it->second);
    }
    return out;
}

// --- feature files -------------------------------------------------------------

const char* to_string(FeatureFileErrc code) noexcept {
    switch (code) {
        case FeatureFileErrc::kIo: return "io-error";
        case FeatureFileErrc::kBadMagic: return "bad-magic";
        case FeatureFileErrc::kVersionMismatch: return "version-mismatch";
        case FeatureFileErrc::kTruncated: return "truncated";
        case FeatureFileErrc::kNonFinite: return "non-finite";
    }
    return "unknown";
}

namespace {

static_assert(std::endian::native == std::endian::little, "feature files assume a little-endian host");

template <class T>
void put(std::string& buf, T v) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    buf.append(bytes, sizeof(T));
}

template <class T>
T get(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

}  // namespace

void write_feature_file(const FeatureMatrix& m, const fs::path& path) {
    const Matrix& v = m.values();
    std::string buf;
    buf.reserve(kFeatureHeaderBytes + 4 * static_cast<std::size_t>(v.size()));
    buf.append(kFeatureMagic, 4);
    put<std::uint16_t>(buf, kFeatureFormatVersion);
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(v.rows()));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(v.cols()));
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        for (Eigen::Index j = 0; j < v.cols(); ++j) {
            const float f = static_cast<float>(v(i, j));
            if (!std::isfinite(f)) {
                throw FeatureFileError(FeatureFileErrc::kNonFinite,
                                       "value at (" + std::to_string(i) + "," + std::to_string(j) +
                                           ") is not representable as a finite float32");
            }
            put<float>(buf, f);
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FeatureFileError(FeatureFileErrc::kIo, "cannot open '" + path.string() + "' for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw FeatureFileError(FeatureFileErrc::kIo, "write failed for '" + path.string() + "'");
}

FeatureMatrix read_feature_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FeatureFileError(FeatureFileErrc::kIo, "cannot open '" + path.string() + "'");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 4 || std::memcmp(buf.data(), kFeatureMagic, 4) != 0) {
        throw FeatureFileError(FeatureFileErrc::kBadMagic, path.string());
    }
    if (buf.size() < kFeatureHeaderBytes) throw FeatureFileError(FeatureFileErrc::kTruncated, "header of " + path.string());
    const auto version = get<std::uint16_t>(buf.data() + 4);
    if (version != kFeatureFormatVersion) {
        throw FeatureFileError(FeatureFileErrc::kVersionMismatch,
                               path.string() + " has version " + std::to_string(version));
    }
    const auto rows = get<std::uint32_t>(buf.data() + 6);
    const auto cols = get<std::uint32_t>(buf.data() + 10);
    const std::size_t payload = 4ULL * rows * cols;
    if (buf.size() < kFeatureHeaderBytes + payload) {
        throw FeatureFileError(FeatureFileErrc::kTruncated,
                               path.string() + " holds " + std::to_string(buf.size() - kFeatureHeaderBytes) +
                                   " of " + std::to_string(payload) + " payload bytes");
    }
    if (rows == 0 || cols == 0) throw UserError(path.string() + ": empty feature matrix");

    Matrix v(rows, cols);
    const char* p = buf.data() + kFeatureHeaderBytes;
    for (std::uint32_t i = 0; i < rows; ++i) {
        for (std::uint32_t j = 0; j < cols; ++j, p += 4) {
            const float f = get<float>(p);
            if (!std::isfinite(f)) {
                throw FeatureFileError(FeatureFileErrc::kNonFinite, path.string() + " at row " + std::to_string(i));
            }
            v(i, j) = f;
        }
    }
    return FeatureMatrix(std::move(v));
}

// --- manifest --------------------------------------------------------------------

namespace {

void write_relevance(const std::vector<bool>& rel, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw UserError("cannot write '" + path.string() + "'");
    for (bool r : rel) out << (r ? '1' : '0') << '\n';
}

std::vector<bool> read_relevance(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UserError("cannot open relevance file '" + path.string() + "'");
    std::vector<bool> rel;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line != "0" && line != "1") throw UserError("relevance file '" + path.string() + "': bad line '" + line + "'");
        rel.push_back(line == "1");
    }
    return rel;
}

}  // namespace

void write_dataset(const std::vector<BagPair>& bags, const fs::path& dir) {
    fs::create_directories(dir / "features");
    std::ofstream manifest(dir / kManifestFileName, std::ios::trunc);
    if (!manifest) throw UserError("cannot write manifest in '" + dir.string() + "'");
    manifest << "id\tlabel\thi_path\tlo_path\trelevance_path\n";
    for (const auto& b : bags) {
        const fs::path hi = fs::path("features") / (b.id() + ".hi.bin");
        const fs::path lo = fs::path("features") / (b.id() + ".lo.bin");
        write_feature_file(b.hi(), dir / hi);
        write_feature_file(b.lo(), dir / lo);
        std::string rel_field = "-";
        if (b.truth_relevance()) {
            const fs::path rel = fs::path("features") / (b.id() + ".rel.txt");
            write_relevance(*b.truth_relevance(), dir / rel);
            rel_field = rel.generic_string();
        }
        manifest << b.id() << '\t' << b.label() << '\t' << hi.generic_string() << '\t' << lo.generic_string() << '\t'
                 << rel_field << '\n';
    }
    if (!manifest) throw UserError("failed writing manifest in '" + dir.string() + "'");
}

std::vector<BagPair> read_dataset(const fs::path& dir_or_manifest) {
    const fs::path manifest_path =
        fs::is_directory(dir_or_manifest) ? dir_or_manifest / kManifestFileName : dir_or_manifest;
    std::ifstream in(manifest_path);
    if (!in) throw UserError("missing bag manifest '" + manifest_path.string() + "'");
    const fs::path base = manifest_path.parent_path();

    std::vector<BagPair> bags;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, '\t')) fields.push_back(f);
        if (fields.size() != 5) {
            throw UserError(manifest_path.string() + ":" + std::to_string(line_no) + ": expected 5 tab-separated fields");
        }
        int label = 0;
        if (fields[1] == "0") label = 0;
        else if (fields[1] == "1") label = 1;
        else throw UserError(manifest_path.string() + ":" + std::to_string(line_no) + ": label must be 0 or 1");
        std::optional<std::vector<bool>> rel;
        if (fields[4] != "-") rel = read_relevance(base / fields[4]);
        bags.emplace_back(fields[0], read_feature_file(base / fields[2]), read_feature_file(base / fields[3]), label,
                          std::move(rel));
    }
    return bags;
}

}  // namespace milcascade
