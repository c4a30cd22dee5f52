#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kdadapt/autodiff.hpp"
#include "kdadapt/tokenizer.hpp"

namespace kdadapt::nn {

enum class SizeClass { Large, Medium, Small, Tiny };

std::string size_class_name(SizeClass size);
SizeClass parse_size_class(const std::string &text);

inline constexpr int kDeskScaleFactor = 4;

struct ArchConfig {
    SizeClass size_class = SizeClass::Tiny;
    int total_layers = 2;
    int ff_dim = 1024;
    int hidden_dim = 256;
    int num_heads = 4;
    double dropout = 0.1;
    int scale_factor = 1;

    // Full-size dimensions of a class divided by scale_factor. Layer and head
    // counts are not scaled.
    static ArchConfig preset(SizeClass size, int scale_factor = kDeskScaleFactor);

    int encoder_layers() const { return total_layers / 2; }
    int decoder_layers() const { return total_layers / 2; }
    void validate() const;
    std::string describe() const;

    friend bool operator==(const ArchConfig &, const ArchConfig &) = default;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// One source sentence and its reference, as ids without bos/eos.
struct TrainingExample {
    std::vector<TokenId> source;
    std::vector<TokenId> target;
};

struct LossResult {
    double loss = 0.0; // training objective (label-smoothed)
    double nll = 0.0;  // plain mean cross-entropy
    std::size_t tokens = 0;
};

struct LossOptions {
    double label_smoothing = 0.0;
    bool train = false; // enables dropout
    std::uint64_t dropout_seed = 0;
};

class EncoderMemory;
class DecoderCache;

// Pre-norm encoder-decoder transformer with sinusoidal positions and a
// source/target embedding table shared between encoder and decoder.
class TransformerModel {
  public:
    TransformerModel(ArchConfig arch, std::size_t vocab_size, std::uint64_t seed);

    const ArchConfig &arch() const { return arch_; }
    std::size_t vocab_size() const { return vocab_size_; }
    std::uint64_t seed() const { return seed_; }

    std::vector<NamedTensor> &parameters() { return params_; }
    const std::vector<NamedTensor> &parameters() const { return params_; }
    Tensor &parameter(const std::string &name);
    const Tensor &parameter(const std::string &name) const;
    std::size_t parameter_count() const;

    void zero_grad();

    // Records the batch forward pass and returns the packed logits
    // (sum of target lengths + 1 per example) x vocab.
    Var forward_batch(Tape &tape, const std::vector<TrainingExample> &batch, bool train, Rng *dropout_rng,
                      std::vector<TokenId> *output_targets) const;

    // Logits for one decoder input sequence; row t scores the token that
    // follows decoder_input[0..t]. The caller supplies the leading bos.
    Matrix forward(std::span<const TokenId> source, std::span<const TokenId> decoder_input) const;

    EncoderMemory encode(std::span<const TokenId> source) const;
    // Advances every cache by one token and returns log-probabilities
    // (caches.size() x vocab) for the next position.
    Matrix decode_step(const EncoderMemory &memory, std::vector<DecoderCache> &caches,
                       std::span<const TokenId> tokens) const;

  private:
    struct AttentionParams {
        std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    };
    struct NormParams {
        std::size_t gain, bias;
    };
    struct FeedForwardParams {
        std::size_t w1, b1, w2, b2;
    };
    struct EncoderLayer {
        NormParams norm_attn;
        AttentionParams self_attn;
        NormParams norm_ff;
        FeedForwardParams ff;
    };
    struct DecoderLayer {
        NormParams norm_self;
        AttentionParams self_attn;
        NormParams norm_cross;
        AttentionParams cross_attn;
        NormParams norm_ff;
        FeedForwardParams ff;
    };

    std::size_t add_param(const std::string &name, std::vector<std::size_t> shape);
    AttentionParams add_attention(const std::string &prefix);
    NormParams add_norm(const std::string &prefix);
    FeedForwardParams add_ff(const std::string &prefix);

    void check_ids(std::span<const TokenId> ids) const;

    struct Packed;
    Var forward_packed(Tape &tape, const Packed &packed, bool train, Rng *dropout_rng) const;

    friend class EncoderMemory;
    friend class DecoderCache;

    ArchConfig arch_;
    std::size_t vocab_size_;
    std::uint64_t seed_;
    std::vector<NamedTensor> params_;
    std::size_t embed_ = 0;
    std::vector<EncoderLayer> encoder_;
    NormParams encoder_norm_{};
    std::vector<DecoderLayer> decoder_;
    NormParams decoder_norm_{};
    std::size_t out_w_ = 0;
    std::size_t out_b_ = 0;
};

// Encoder output plus per-layer cross-attention keys and values.
class EncoderMemory {
  public:
    std::size_t length() const { return static_cast<std::size_t>(states.rows()); }

    Matrix states;
    std::vector<Matrix> cross_keys;
    std::vector<Matrix> cross_values;
};

// Self-attention keys and values of one partial hypothesis.
class DecoderCache {
  public:
    explicit DecoderCache(int layers) : keys(static_cast<std::size_t>(layers)), values(static_cast<std::size_t>(layers)) {}
    std::size_t steps() const { return keys.empty() ? 0 : static_cast<std::size_t>(keys[0].rows()); }

    std::vector<Matrix> keys;
    std::vector<Matrix> values;
};

TransformerModel build_model(const ArchConfig &arch, std::size_t vocab_size, std::uint64_t seed);

// Mean cross-entropy of the batch; gradients land in each parameter's grad
// buffer (previous contents are cleared).
LossResult loss_and_gradients(TransformerModel &model, const std::vector<TrainingExample> &batch,
                              const LossOptions &options);

double sinusoid(std::size_t position, std::size_t dim, std::size_t model_dim);

} // namespace kdadapt::nn
