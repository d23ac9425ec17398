#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "aar/numeric/ops.hpp"
#include "aar/numeric/params.hpp"

namespace aar::model {

using numeric::BasicVar;
using numeric::ParamBinder;
using numeric::ParamStore;

struct AttentionConfig {
  std::size_t dim = 128;
  std::size_t heads = 8;
  std::size_t depth = 2;
  std::size_t mlp_ratio = 4;

  std::size_t head_dim() const { return dim / heads; }

  void validate() const {
    if (heads == 0 || dim % heads != 0)
      throw ConfigError("attention: dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                        " heads");
    if (depth == 0 || mlp_ratio == 0) throw ConfigError("attention: depth and mlp_ratio must be positive");
  }
};

inline std::string layer_prefix(const std::string& block, std::size_t l) {
  return block + ".layer" + std::to_string(l);
}

inline void init_attention_params(const std::string& block, const AttentionConfig& cfg, ParamStore& store,
                                  numeric::Rng& rng) {
  cfg.validate();
  const std::size_t c = cfg.dim, h = cfg.dim * cfg.mlp_ratio;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const auto p = layer_prefix(block, l);
    store.add(p + ".ln1.gain", numeric::Tensor({c}, 1.0f));
    store.add(p + ".ln1.bias", numeric::Tensor({c}, 0.0f));
    store.add(p + ".attn.wqkv", numeric::glorot_uniform({c, 3 * c}, c, c, rng));
    store.add(p + ".attn.bqkv", numeric::Tensor({3 * c}, 0.0f));
    store.add(p + ".attn.wo", numeric::glorot_uniform({c, c}, c, c, rng));
    store.add(p + ".attn.bo", numeric::Tensor({c}, 0.0f));
    store.add(p + ".ln2.gain", numeric::Tensor({c}, 1.0f));
    store.add(p + ".ln2.bias", numeric::Tensor({c}, 0.0f));
    store.add(p + ".mlp.w1", numeric::glorot_uniform({c, h}, c, h, rng));
    store.add(p + ".mlp.b1", numeric::Tensor({h}, 0.0f));
    store.add(p + ".mlp.w2", numeric::glorot_uniform({h, c}, h, c, rng));
    store.add(p + ".mlp.b2", numeric::Tensor({c}, 0.0f));
  }
}

template <class T>
struct BlockTrace {
  /// Sequence entering each encoder layer; layer_inputs[0] is the block input.
  std::vector<BasicVar<T>> layer_inputs;
  BasicVar<T> output;
};

template <class T>
BasicVar<T> multi_head_attention(BasicVar<T> h, ParamBinder<T>& params, const std::string& p,
                                 const AttentionConfig& cfg) {
  using namespace numeric;
  const std::size_t c = cfg.dim, hd = cfg.head_dim();
  auto qkv = add(matmul(h, params(p + ".attn.wqkv")), params(p + ".attn.bqkv"));
  const T inv_sqrt = T(1) / std::sqrt(T(hd));
  std::vector<BasicVar<T>> heads;
  heads.reserve(cfg.heads);
  for (std::size_t i = 0; i < cfg.heads; ++i) {
    auto q = slice(qkv, 1, i * hd, hd);
    auto k = slice(qkv, 1, c + i * hd, hd);
    auto v = slice(qkv, 1, 2 * c + i * hd, hd);
    auto attn = softmax(scale(matmul(q, transpose(k)), inv_sqrt));
    heads.push_back(matmul(attn, v));
  }
  auto merged = cfg.heads == 1 ? heads[0] : concat(heads, 1);
  return add(matmul(merged, params(p + ".attn.wo")), params(p + ".attn.bo"));
}

/// Pre-norm transformer encoder: x += MHA(LN(x)); x += MLP(LN(x)), `depth` times.
template <class T>
BlockTrace<T> attention_forward(BasicVar<T> seq, ParamBinder<T>& params, const std::string& block,
                                const AttentionConfig& cfg) {
  using namespace numeric;
  cfg.validate();
  if (seq.shape().size() != 2 || seq.shape()[1] != cfg.dim)
    throw ContractError("attention_forward: expected [L," + std::to_string(cfg.dim) + "], got " +
                        to_string(seq.shape()));
  BlockTrace<T> trace;
  auto x = seq;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    trace.layer_inputs.push_back(x);
    const auto p = layer_prefix(block, l);
    auto h = layer_norm(x, params(p + ".ln1.gain"), params(p + ".ln1.bias"));
    x = add(x, multi_head_attention(h, params, p, cfg));
    auto h2 = layer_norm(x, params(p + ".ln2.gain"), params(p + ".ln2.bias"));
    auto m = gelu(add(matmul(h2, params(p + ".mlp.w1")), params(p + ".mlp.b1")));
    x = add(x, add(matmul(m, params(p + ".mlp.w2")), params(p + ".mlp.b2")));
  }
  trace.output = x;
  return trace;
}

}  // namespace aar::model
