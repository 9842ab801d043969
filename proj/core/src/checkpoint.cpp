// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include "milcascade/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "milcascade/tensors.hpp"

namespace milcascade {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'H', 'D', 'C', 'K'};
constexpr std::uint8_t kKindDmin = 1;
constexpr std::uint8_t kKindLipn = 2;

class Writer {
  public:
    template <class T>
    void put(T v) {
        char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        buf_.append(b, sizeof(T));
    }
    void bytes(const char* p, std::size_t n) { buf_.append(p, n); }

    template <class P>
    void tensors(const P& params) {
        const auto named = named_tensors(params);
        put<std::uint32_t>(static_cast<std::uint32_t>(named.size()));
        for (const auto& [name, m] : named) {
            put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
            bytes(name.data(), name.size());
            put<std::uint32_t>(static_cast<std::uint32_t>(m->rows()));
            put<std::uint32_t>(static_cast<std::uint32_t>(m->cols()));
            for (Eigen::Index i = 0; i < m->size(); ++i) put<double>(m->data()[i]);
        }
    }

    void save(const fs::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw UserError("cannot write checkpoint '" + path.string() + "'");
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw UserError("failed writing checkpoint '" + path.string() + "'");
    }

  private:
    std::string buf_;
};

class Reader {
  public:
    explicit Reader(const fs::path& path) : path_(path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw UserError("missing checkpoint '" + path.string() + "'");
        buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    /// Reads stored tensors into the pre-shaped container `params`.
    template <class P>
    void tensors(P& params) {
        const auto count = get<std::uint32_t>();
        std::vector<std::pair<std::string, Eigen::MatrixXd*>> slots;
        params.visit([&](const std::string& name, Eigen::MatrixXd& m) { slots.emplace_back(name, &m); });
        if (count != slots.size()) fail("tensor count mismatch");
        for (auto& [name, m] : slots) {
            const auto len = get<std::uint16_t>();
            const std::string stored = str(len);
            if (stored != name) fail("expected tensor '" + name + "', found '" + stored + "'");
            const auto rows = get<std::uint32_t>();
            const auto cols = get<std::uint32_t>();
            if (rows != m->rows() || cols != m->cols()) fail("tensor '" + name + "' has unexpected shape");
            for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = get<double>();
        }
        if (!all_finite(params)) fail("non-finite parameter values");
    }

    void header(std::uint8_t expected_kind) {
        if (str(4) != std::string(kMagic, 4)) fail("bad magic");
        const auto version = get<std::uint16_t>();
        if (version != kCheckpointVersion) fail("unsupported version " + std::to_string(version));
        const auto kind = get<std::uint8_t>();
        if (kind != expected_kind) fail("checkpoint holds a different model kind");
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw UserError("checkpoint '" + path_.string() + "': " + what);
    }

  private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) fail("truncated");
    }

    fs::path path_;
    std::string buf_;
    std::size_t pos_ = 0;
};

void put_header(Writer& w, std::uint8_t kind) {
    w.bytes(kMagic, 4);
    w.put<std::uint16_t>(kCheckpointVersion);
    w.put<std::uint8_t>(kind);
}

int head_order(const ClassifierHead& h) {
    if (const auto* cka = std::get_if<CkaParams>(&h.variant())) return cka->order;
    return 0;
}

}  // namespace

DminShape shape_of(const DminParams& p) {
    DminShape s;
    s.d_hi = p.d_hi();
    s.q_dim = p.q_dim();
    s.attn_dim = p.attn_dim();
    s.head = p.heads[0].kind();
    s.order = head_order(p.heads[0]);
    if (s.order == 0) s.order = 1;
    return s;
}

void save_dmin_checkpoint(const fs::path& path, const DminParams& params, const DminHyper& h) {
    Writer w;
    put_header(w, kKindDmin);
    for (double v : {h.tau, h.gamma, h.r, h.alphas.cls, h.alphas.clu, h.alphas.dis1, h.alphas.dis2, h.alphas.rate}) {
        w.put<double>(v);
    }
    w.put<std::int32_t>(h.topk);
    const DminShape s = shape_of(params);
    for (int v : {s.d_hi, s.q_dim, s.attn_dim, s.order, static_cast<int>(s.head)}) w.put<std::int32_t>(v);
    w.tensors(params);
    w.save(path);
}

DminCheckpoint load_dmin_checkpoint(const fs::path& path) {
    Reader r(path);
    r.header(kKindDmin);
    DminCheckpoint ck;
    DminHyper& h = ck.hyper;
    h.tau = r.get<double>();
    h.gamma = r.get<double>();
    h.r = r.get<double>();
    h.alphas.cls = r.get<double>();
    h.alphas.clu = r.get<double>();
    h.alphas.dis1 = r.get<double>();
    h.alphas.dis2 = r.get<double>();
    h.alphas.rate = r.get<double>();
    h.topk = r.get<std::int32_t>();
    DminShape& s = ck.shape;
    s.d_hi = r.get<std::int32_t>();
    s.q_dim = r.get<std::int32_t>();
    s.attn_dim = r.get<std::int32_t>();
    s.order = r.get<std::int32_t>();
    const auto head = r.get<std::int32_t>();
    if (head < 0 || head > static_cast<int>(HeadKind::kKaLite)) r.fail("unknown classifier kind");
    s.head = static_cast<HeadKind>(head);
    if (s.d_hi < 1 || s.q_dim < 1 || s.attn_dim < 1 || s.order < 1) r.fail("invalid shape");
    ck.params = DminParams::random(s, 0);
    r.tensors(ck.params);
    try {
        h.validate();
    } catch (const UserError& e) {
        r.fail(e.what());
    }
    return ck;
}

void save_lipn_checkpoint(const fs::path& path, const LipnParams& params, const LipnHyper& h) {
    Writer w;
    put_header(w, kKindLipn);
    for (double v : {h.beta1, h.beta2, h.gamma, h.r}) w.put<double>(v);
    w.put<std::int32_t>(params.d_lo());
    w.put<std::int32_t>(params.hidden());
    w.tensors(params);
    w.save(path);
}

LipnCheckpoint load_lipn_checkpoint(const fs::path& path) {
    Reader r(path);
    r.header(kKindLipn);
    LipnCheckpoint ck;
    ck.hyper.beta1 = r.get<double>();
    ck.hyper.beta2 = r.get<double>();
    ck.hyper.gamma = r.get<double>();
    ck.hyper.r = r.get<double>();
    LipnShape s;
    s.d_lo = r.get<std::int32_t>();
    s.hidden = r.get<std::int32_t>();
    if (s.d_lo < 1 || s.hidden < 1) r.fail("invalid shape");
    ck.params = LipnParams::random(s, 0);
    r.tensors(ck.params);
    return ck;
}

}  // namespace milcascade
