#include "kdadapt/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "kdadapt/error.hpp"
#include "kdadapt/random.hpp"

namespace kdadapt::nn {

namespace {

using Segments = std::vector<AttentionSegment>;

Matrix layer_norm_rows(const Matrix &x, const Matrix &gain, const Matrix &bias, double eps = 1e-6) {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).mean();
        const double var = (x.row(r).array() - mean).square().mean();
        const double inv = 1.0 / std::sqrt(var + eps);
        out.row(r) = ((x.row(r).array() - mean) * inv) * gain.row(0).array() + bias.row(0).array();
    }
    return out;
}

Matrix affine(const Matrix &x, const Matrix &w, const Matrix &b) {
    Matrix out = x * w;
    out.rowwise() += b.row(0);
    return out;
}

// Attention of every row of q over all rows of keys/values.
Matrix attend_all(const Matrix &q, const Matrix &keys, const Matrix &values, int heads) {
    const auto d = q.cols();
    const auto dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix out(q.rows(), d);
    for (int h = 0; h < heads; ++h) {
        Matrix scores = (q.middleCols(h * dh, dh) * keys.middleCols(h * dh, dh).transpose()) * inv_sqrt;
        Matrix p = log_softmax_rows(scores).array().exp();
        out.middleCols(h * dh, dh).noalias() = p * values.middleCols(h * dh, dh);
    }
    return out;
}

void append_row(Matrix &m, const Eigen::Ref<const RowVector> &row) {
    const auto r = m.rows();
    if (r == 0) {
        m = row;
        return;
    }
    m.conservativeResize(r + 1, Eigen::NoChange);
    m.row(r) = row;
}

} // namespace

double sinusoid(std::size_t position, std::size_t dim, std::size_t model_dim) {
    const double pair = static_cast<double>(dim / 2 * 2);
    const double angle =
        static_cast<double>(position) / std::pow(10000.0, pair / static_cast<double>(model_dim));
    return dim % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

std::string size_class_name(SizeClass size) {
    switch (size) {
    case SizeClass::Large:
        return "Large";
    case SizeClass::Medium:
        return "Medium";
    case SizeClass::Small:
        return "Small";
    case SizeClass::Tiny:
        return "Tiny";
    }
    return "Tiny";
}

SizeClass parse_size_class(const std::string &text) {
    std::string lower;
    for (char c : text)
        lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (lower == "large")
        return SizeClass::Large;
    if (lower == "medium")
        return SizeClass::Medium;
    if (lower == "small")
        return SizeClass::Small;
    if (lower == "tiny")
        return SizeClass::Tiny;
    fail(ErrorCategory::validation, "size_class: unknown size '" + text + "'");
}

ArchConfig ArchConfig::preset(SizeClass size, int scale_factor) {
    if (scale_factor < 1)
        fail(ErrorCategory::validation, "scale_factor: must be at least 1");
    ArchConfig arch;
    arch.size_class = size;
    arch.scale_factor = scale_factor;
    int layers = 0, ff = 0, hidden = 0;
    switch (size) {
    case SizeClass::Large:
        layers = 12, ff = 2048, hidden = 512;
        break;
    case SizeClass::Medium:
        layers = 6, ff = 2048, hidden = 512;
        break;
    case SizeClass::Small:
        layers = 6, ff = 1024, hidden = 256;
        break;
    case SizeClass::Tiny:
        layers = 2, ff = 1024, hidden = 256;
        break;
    }
    arch.total_layers = layers;
    arch.num_heads = hidden / 64;
    arch.ff_dim = ff / scale_factor;
    arch.hidden_dim = hidden / scale_factor;
    arch.validate();
    return arch;
}

void ArchConfig::validate() const {
    if (total_layers < 2 || total_layers % 2 != 0)
        fail(ErrorCategory::validation, "total_layers: must be even and at least 2");
    if (hidden_dim < 1 || ff_dim < 1)
        fail(ErrorCategory::validation, "hidden_dim/ff_dim: must be positive");
    if (num_heads < 1 || hidden_dim % num_heads != 0)
        fail(ErrorCategory::validation, "hidden_dim " + std::to_string(hidden_dim) +
                                            " is not divisible by num_heads " + std::to_string(num_heads));
    if (!(dropout >= 0.0 && dropout < 1.0))
        fail(ErrorCategory::validation, "dropout: must lie in [0, 1)");
    if (scale_factor < 1)
        fail(ErrorCategory::validation, "scale_factor: must be at least 1");
}

std::string ArchConfig::describe() const {
    std::ostringstream out;
    out << size_class_name(size_class) << "(layers=" << total_layers << ", ff=" << ff_dim << ", hidden=" << hidden_dim
        << ", heads=" << num_heads << ", dropout=" << dropout << ", scale=" << scale_factor << ")";
    return out.str();
}

std::size_t TransformerModel::add_param(const std::string &name, std::vector<std::size_t> shape) {
    params_.push_back({name, Tensor(std::move(shape))});
    return params_.size() - 1;
}

TransformerModel::AttentionParams TransformerModel::add_attention(const std::string &prefix) {
    const auto d = static_cast<std::size_t>(arch_.hidden_dim);
    AttentionParams p{};
    p.wq = add_param(prefix + ".q.weight", {d, d});
    p.bq = add_param(prefix + ".q.bias", {d});
    p.wk = add_param(prefix + ".k.weight", {d, d});
    p.bk = add_param(prefix + ".k.bias", {d});
    p.wv = add_param(prefix + ".v.weight", {d, d});
    p.bv = add_param(prefix + ".v.bias", {d});
    p.wo = add_param(prefix + ".out.weight", {d, d});
    p.bo = add_param(prefix + ".out.bias", {d});
    return p;
}

TransformerModel::NormParams TransformerModel::add_norm(const std::string &prefix) {
    const auto d = static_cast<std::size_t>(arch_.hidden_dim);
    NormParams p{};
    p.gain = add_param(prefix + ".gain", {d});
    p.bias = add_param(prefix + ".bias", {d});
    params_[p.gain].tensor.value.setOnes();
    return p;
}

TransformerModel::FeedForwardParams TransformerModel::add_ff(const std::string &prefix) {
    const auto d = static_cast<std::size_t>(arch_.hidden_dim);
    const auto f = static_cast<std::size_t>(arch_.ff_dim);
    FeedForwardParams p{};
    p.w1 = add_param(prefix + ".fc1.weight", {d, f});
    p.b1 = add_param(prefix + ".fc1.bias", {f});
    p.w2 = add_param(prefix + ".fc2.weight", {f, d});
    p.b2 = add_param(prefix + ".fc2.bias", {d});
    return p;
}

TransformerModel::TransformerModel(ArchConfig arch, std::size_t vocab_size, std::uint64_t seed)
    : arch_(arch), vocab_size_(vocab_size), seed_(seed) {
    arch_.validate();
    if (vocab_size_ <= static_cast<std::size_t>(SpecialTokens::count))
        fail(ErrorCategory::validation, "vocab_size must exceed the special-token count");
    const auto d = static_cast<std::size_t>(arch_.hidden_dim);

    embed_ = add_param("embed", {vocab_size_, d});
    for (int l = 0; l < arch_.encoder_layers(); ++l) {
        const std::string prefix = "encoder." + std::to_string(l);
        EncoderLayer layer{};
        layer.norm_attn = add_norm(prefix + ".norm_attn");
        layer.self_attn = add_attention(prefix + ".self_attn");
        layer.norm_ff = add_norm(prefix + ".norm_ff");
        layer.ff = add_ff(prefix + ".ff");
        encoder_.push_back(layer);
    }
    encoder_norm_ = add_norm("encoder.norm");
    for (int l = 0; l < arch_.decoder_layers(); ++l) {
        const std::string prefix = "decoder." + std::to_string(l);
        DecoderLayer layer{};
        layer.norm_self = add_norm(prefix + ".norm_self");
        layer.self_attn = add_attention(prefix + ".self_attn");
        layer.norm_cross = add_norm(prefix + ".norm_cross");
        layer.cross_attn = add_attention(prefix + ".cross_attn");
        layer.norm_ff = add_norm(prefix + ".norm_ff");
        layer.ff = add_ff(prefix + ".ff");
        decoder_.push_back(layer);
    }
    decoder_norm_ = add_norm("decoder.norm");
    out_w_ = add_param("output.weight", {d, vocab_size_});
    out_b_ = add_param("output.bias", {vocab_size_});

    // Weight matrices: uniform with variance 1/fan_in. The embedding table
    // uses fan_in = hidden_dim. Biases start at zero and norm gains at one.
    Rng rng(mix_seed(seed_, 0x1417));
    for (auto &[name, tensor] : params_) {
        if (tensor.shape().size() != 2)
            continue;
        const double fan_in = name == "embed" ? static_cast<double>(d) : static_cast<double>(tensor.shape()[0]);
        const double limit = std::sqrt(3.0 / fan_in);
        for (Eigen::Index i = 0; i < tensor.value.size(); ++i)
            tensor.value.data()[i] = rng.uniform(-limit, limit);
    }
}

Tensor &TransformerModel::parameter(const std::string &name) {
    for (auto &p : params_)
        if (p.name == name)
            return p.tensor;
    fail(ErrorCategory::validation, "no parameter named '" + name + "'");
}

const Tensor &TransformerModel::parameter(const std::string &name) const {
    return const_cast<TransformerModel *>(this)->parameter(name);
}

std::size_t TransformerModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto &p : params_)
        n += p.tensor.size();
    return n;
}

void TransformerModel::zero_grad() {
    for (auto &p : params_)
        p.tensor.grad.setZero();
}

void TransformerModel::check_ids(std::span<const TokenId> ids) const {
    for (auto id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_size_)
            fail(ErrorCategory::validation,
                 "token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(vocab_size_));
}

struct TransformerModel::Packed {
    std::vector<TokenId> source;
    std::vector<std::size_t> source_positions;
    std::vector<TokenId> decoder_input;
    std::vector<std::size_t> decoder_positions;
    std::shared_ptr<Segments> encoder_self = std::make_shared<Segments>();
    std::shared_ptr<Segments> decoder_self = std::make_shared<Segments>();
    std::shared_ptr<Segments> cross = std::make_shared<Segments>();

    void add(std::span<const TokenId> src, std::span<const TokenId> dec) {
        const int src_begin = static_cast<int>(source.size());
        const int src_len = static_cast<int>(src.size());
        const int dec_begin = static_cast<int>(decoder_input.size());
        const int dec_len = static_cast<int>(dec.size());
        for (std::size_t i = 0; i < src.size(); ++i) {
            source.push_back(src[i]);
            source_positions.push_back(i);
        }
        for (std::size_t i = 0; i < dec.size(); ++i) {
            decoder_input.push_back(dec[i]);
            decoder_positions.push_back(i);
        }
        encoder_self->push_back({src_begin, src_len, src_begin, src_len});
        decoder_self->push_back({dec_begin, dec_len, dec_begin, dec_len});
        cross->push_back({dec_begin, dec_len, src_begin, src_len});
    }
};

namespace {

template <class AttentionParamsT>
Var attention_sublayer(Tape &tape, const std::vector<Var> &pv, const AttentionParamsT &p, Var query_in, Var kv_in,
                       std::shared_ptr<const Segments> segments, int heads, bool causal) {
    Var q = ops::linear(tape, query_in, pv[p.wq], pv[p.bq]);
    Var k = ops::linear(tape, kv_in, pv[p.wk], pv[p.bk]);
    Var v = ops::linear(tape, kv_in, pv[p.wv], pv[p.bv]);
    Var a = ops::attention(tape, q, k, v, std::move(segments), heads, causal);
    return ops::linear(tape, a, pv[p.wo], pv[p.bo]);
}

template <class FeedForwardParamsT>
Var ff_sublayer(Tape &tape, const std::vector<Var> &pv, const FeedForwardParamsT &p, Var x) {
    Var h = ops::relu(tape, ops::linear(tape, x, pv[p.w1], pv[p.b1]));
    return ops::linear(tape, h, pv[p.w2], pv[p.b2]);
}

Matrix embed_rows(const Matrix &table, std::span<const TokenId> ids, std::span<const std::size_t> positions) {
    const auto d = table.cols();
    const double scale = std::sqrt(static_cast<double>(d));
    Matrix out(static_cast<Eigen::Index>(ids.size()), d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        out.row(r) = table.row(ids[i]) * scale;
        for (Eigen::Index j = 0; j < d; ++j)
            out(r, j) += sinusoid(positions[i], static_cast<std::size_t>(j), static_cast<std::size_t>(d));
    }
    return out;
}

Matrix positional_block(std::span<const std::size_t> positions, Eigen::Index d) {
    Matrix out(static_cast<Eigen::Index>(positions.size()), d);
    for (std::size_t i = 0; i < positions.size(); ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            out(static_cast<Eigen::Index>(i), j) =
                sinusoid(positions[i], static_cast<std::size_t>(j), static_cast<std::size_t>(d));
    return out;
}

} // namespace

Var TransformerModel::forward_batch(Tape &tape, const std::vector<TrainingExample> &batch, bool train,
                                    Rng *dropout_rng, std::vector<TokenId> *output_targets) const {
    if (batch.empty())
        fail(ErrorCategory::validation, "empty batch");
    Packed packed;
    if (output_targets)
        output_targets->clear();
    std::vector<TokenId> dec;
    for (const auto &ex : batch) {
        if (ex.source.empty())
            fail(ErrorCategory::validation, "empty source sequence in batch");
        check_ids(ex.source);
        check_ids(ex.target);
        dec.assign(1, SpecialTokens::bos);
        dec.insert(dec.end(), ex.target.begin(), ex.target.end());
        packed.add(ex.source, dec);
        if (output_targets) {
            // A target made only of padding is a padding row: its eos is masked too.
            const bool all_pad = !ex.target.empty() && std::all_of(ex.target.begin(), ex.target.end(), [](TokenId t) {
                return t == SpecialTokens::pad;
            });
            output_targets->insert(output_targets->end(), ex.target.begin(), ex.target.end());
            output_targets->push_back(all_pad ? SpecialTokens::pad : SpecialTokens::eos);
        }
    }
    return forward_packed(tape, packed, train, dropout_rng);
}

Var TransformerModel::forward_packed(Tape &tape, const Packed &packed, bool train, Rng *dropout_rng) const {
    std::vector<Var> pv;
    pv.reserve(params_.size());
    for (auto &p : const_cast<std::vector<NamedTensor> &>(params_))
        pv.push_back(tape.parameter(p.tensor));

    const double rate = train ? arch_.dropout : 0.0;
    auto drop = [&](Var x) { return (rate > 0.0 && dropout_rng) ? ops::dropout(tape, x, rate, *dropout_rng) : x; };
    const int heads = arch_.num_heads;
    const auto d = static_cast<Eigen::Index>(arch_.hidden_dim);
    const double emb_scale = std::sqrt(static_cast<double>(d));

    auto embed = [&](const std::vector<TokenId> &ids, const std::vector<std::size_t> &positions) {
        Var e = ops::scale(tape, ops::embedding(tape, pv[embed_], ids), emb_scale);
        return drop(ops::add(tape, e, tape.constant(positional_block(positions, d))));
    };

    Var x = embed(packed.source, packed.source_positions);
    for (const auto &layer : encoder_) {
        Var h = ops::layer_norm(tape, x, pv[layer.norm_attn.gain], pv[layer.norm_attn.bias]);
        x = ops::add(tape, x, drop(attention_sublayer(tape, pv, layer.self_attn, h, h, packed.encoder_self, heads, false)));
        h = ops::layer_norm(tape, x, pv[layer.norm_ff.gain], pv[layer.norm_ff.bias]);
        x = ops::add(tape, x, drop(ff_sublayer(tape, pv, layer.ff, h)));
    }
    Var memory = ops::layer_norm(tape, x, pv[encoder_norm_.gain], pv[encoder_norm_.bias]);

    Var y = embed(packed.decoder_input, packed.decoder_positions);
    for (const auto &layer : decoder_) {
        Var h = ops::layer_norm(tape, y, pv[layer.norm_self.gain], pv[layer.norm_self.bias]);
        y = ops::add(tape, y, drop(attention_sublayer(tape, pv, layer.self_attn, h, h, packed.decoder_self, heads, true)));
        h = ops::layer_norm(tape, y, pv[layer.norm_cross.gain], pv[layer.norm_cross.bias]);
        y = ops::add(tape, y,
                     drop(attention_sublayer(tape, pv, layer.cross_attn, h, memory, packed.cross, heads, false)));
        h = ops::layer_norm(tape, y, pv[layer.norm_ff.gain], pv[layer.norm_ff.bias]);
        y = ops::add(tape, y, drop(ff_sublayer(tape, pv, layer.ff, h)));
    }
    y = ops::layer_norm(tape, y, pv[decoder_norm_.gain], pv[decoder_norm_.bias]);
    return ops::linear(tape, y, pv[out_w_], pv[out_b_]);
}

Matrix TransformerModel::forward(std::span<const TokenId> source, std::span<const TokenId> decoder_input) const {
    if (source.empty() || decoder_input.empty())
        fail(ErrorCategory::validation, "forward: source and decoder input must be non-empty");
    check_ids(source);
    check_ids(decoder_input);
    Packed packed;
    packed.add(source, decoder_input);
    Tape tape;
    Var logits = forward_packed(tape, packed, false, nullptr);
    return tape.value(logits);
}

EncoderMemory TransformerModel::encode(std::span<const TokenId> source) const {
    if (source.empty())
        fail(ErrorCategory::validation, "encode: empty source");
    check_ids(source);
    const auto &P = params_;
    const int heads = arch_.num_heads;
    std::vector<std::size_t> positions(source.size());
    for (std::size_t i = 0; i < positions.size(); ++i)
        positions[i] = i;
    Matrix x = embed_rows(P[embed_].tensor.value, source, positions);
    for (const auto &layer : encoder_) {
        Matrix h = layer_norm_rows(x, P[layer.norm_attn.gain].tensor.value, P[layer.norm_attn.bias].tensor.value);
        const auto &a = layer.self_attn;
        Matrix q = affine(h, P[a.wq].tensor.value, P[a.bq].tensor.value);
        Matrix k = affine(h, P[a.wk].tensor.value, P[a.bk].tensor.value);
        Matrix v = affine(h, P[a.wv].tensor.value, P[a.bv].tensor.value);
        x += affine(attend_all(q, k, v, heads), P[a.wo].tensor.value, P[a.bo].tensor.value);
        h = layer_norm_rows(x, P[layer.norm_ff.gain].tensor.value, P[layer.norm_ff.bias].tensor.value);
        Matrix f = affine(h, P[layer.ff.w1].tensor.value, P[layer.ff.b1].tensor.value).cwiseMax(0.0);
        x += affine(f, P[layer.ff.w2].tensor.value, P[layer.ff.b2].tensor.value);
    }
    EncoderMemory memory;
    memory.states = layer_norm_rows(x, P[encoder_norm_.gain].tensor.value, P[encoder_norm_.bias].tensor.value);
    for (const auto &layer : decoder_) {
        const auto &c = layer.cross_attn;
        memory.cross_keys.push_back(affine(memory.states, P[c.wk].tensor.value, P[c.bk].tensor.value));
        memory.cross_values.push_back(affine(memory.states, P[c.wv].tensor.value, P[c.bv].tensor.value));
    }
    return memory;
}

Matrix TransformerModel::decode_step(const EncoderMemory &memory, std::vector<DecoderCache> &caches,
                                     std::span<const TokenId> tokens) const {
    if (caches.size() != tokens.size() || caches.empty())
        fail(ErrorCategory::validation, "decode_step: one token per cache required");
    check_ids(tokens);
    const auto &P = params_;
    const int heads = arch_.num_heads;
    const auto d = static_cast<Eigen::Index>(arch_.hidden_dim);
    const auto dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<std::size_t> positions(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i)
        positions[i] = caches[i].steps();
    Matrix x = embed_rows(P[embed_].tensor.value, tokens, positions);
    for (std::size_t l = 0; l < decoder_.size(); ++l) {
        const auto &layer = decoder_[l];
        Matrix h = layer_norm_rows(x, P[layer.norm_self.gain].tensor.value, P[layer.norm_self.bias].tensor.value);
        const auto &a = layer.self_attn;
        Matrix q = affine(h, P[a.wq].tensor.value, P[a.bq].tensor.value);
        Matrix k = affine(h, P[a.wk].tensor.value, P[a.bk].tensor.value);
        Matrix v = affine(h, P[a.wv].tensor.value, P[a.bv].tensor.value);
        Matrix attn(x.rows(), d);
        for (std::size_t i = 0; i < caches.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            append_row(caches[i].keys[l], k.row(r));
            append_row(caches[i].values[l], v.row(r));
            const Matrix &K = caches[i].keys[l];
            const Matrix &V = caches[i].values[l];
            for (int hh = 0; hh < heads; ++hh) {
                RowVector scores = (q.row(r).segment(hh * dh, dh) * K.middleCols(hh * dh, dh).transpose()) * inv_sqrt;
                const double m = scores.maxCoeff();
                RowVector p = (scores.array() - m).exp();
                p /= p.sum();
                attn.row(r).segment(hh * dh, dh).noalias() = p * V.middleCols(hh * dh, dh);
            }
        }
        x += affine(attn, P[a.wo].tensor.value, P[a.bo].tensor.value);

        h = layer_norm_rows(x, P[layer.norm_cross.gain].tensor.value, P[layer.norm_cross.bias].tensor.value);
        const auto &c = layer.cross_attn;
        Matrix cq = affine(h, P[c.wq].tensor.value, P[c.bq].tensor.value);
        x += affine(attend_all(cq, memory.cross_keys[l], memory.cross_values[l], heads), P[c.wo].tensor.value,
                    P[c.bo].tensor.value);

        h = layer_norm_rows(x, P[layer.norm_ff.gain].tensor.value, P[layer.norm_ff.bias].tensor.value);
        Matrix f = affine(h, P[layer.ff.w1].tensor.value, P[layer.ff.b1].tensor.value).cwiseMax(0.0);
        x += affine(f, P[layer.ff.w2].tensor.value, P[layer.ff.b2].tensor.value);
    }
    x = layer_norm_rows(x, P[decoder_norm_.gain].tensor.value, P[decoder_norm_.bias].tensor.value);
    return log_softmax_rows(affine(x, P[out_w_].tensor.value, P[out_b_].tensor.value));
}

TransformerModel build_model(const ArchConfig &arch, std::size_t vocab_size, std::uint64_t seed) {
    return TransformerModel(arch, vocab_size, seed);
}

LossResult loss_and_gradients(TransformerModel &model, const std::vector<TrainingExample> &batch,
                              const LossOptions &options) {
    if (batch.empty())
        fail(ErrorCategory::validation, "loss_and_gradients: empty batch");
    model.zero_grad();
    Tape tape;
    Rng rng(options.dropout_seed);
    std::vector<TokenId> targets;
    Var logits = model.forward_batch(tape, batch, options.train, options.train ? &rng : nullptr, &targets);
    LossResult result;
    for (auto id : targets)
        if (id != SpecialTokens::pad)
            ++result.tokens;
    Var loss = ops::cross_entropy(tape, logits, targets, options.label_smoothing, SpecialTokens::pad, &result.nll);
    result.loss = tape.value(loss)(0, 0);
    tape.backward(loss);
    return result;
}

} // namespace kdadapt::nn
