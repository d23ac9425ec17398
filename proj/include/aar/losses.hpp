#pragma once

#include <cmath>
#include <numbers>

#include "aar/model.hpp"

namespace aar::losses {

using numeric::BasicGraph;
using numeric::BasicTensor;
using numeric::BasicVar;

/// Pull contrast: -cos(z1, z2).
template <class T>
BasicVar<T> d_pos(BasicVar<T> z1, BasicVar<T> z2) {
  return numeric::scale(numeric::cosine_similarity(z1, z2), T(-1));
}

/// Push contrast: +cos(z3, z4).
template <class T>
BasicVar<T> d_neg(BasicVar<T> z3, BasicVar<T> z4) {
  return numeric::cosine_similarity(z3, z4);
}

struct ArcFaceHead {
  double s = 30.0;
  double m = 0.3;

  void validate() const {
    if (!(m >= 0.0 && m < std::numbers::pi / 2)) throw ConfigError("arcface: margin must lie in [0, pi/2)");
    if (!(s > 0.0)) throw ConfigError("arcface: scale must be positive");
  }
};

/// Scaled cosine logits with the additive angular margin on the target entry:
/// s*cos(theta_j) for j != label, s*cos(theta_label + m) for the target. When
/// cos(theta) <= cos(pi - m) the target falls back to cos(theta) - m*sin(m).
template <class T>
BasicVar<T> arc_margin_logits(BasicVar<T> cosines, std::size_t label, const ArcFaceHead& head) {
  const std::size_t k = cosines.size();
  if (label >= k)
    throw ContractError("arcface_loss: label " + std::to_string(label) + " out of range for " + std::to_string(k) +
                        " classes");
  const T s = T(head.s), cm = T(std::cos(head.m)), sm = T(std::sin(head.m));
  const T threshold = T(std::cos(std::numbers::pi - head.m));
  const T fallback = T(head.m * std::sin(head.m));
  BasicTensor<T> out = cosines.value();
  const T c = out[label];
  const T sin2 = std::max(T(0), T(1) - c * c);
  const T sin_t = std::sqrt(sin2);
  const bool guarded = c <= threshold;
  T dtarget;
  if (guarded) {
    out[label] = c - fallback;
    dtarget = T(1);
  } else {
    out[label] = c * cm - sin_t * sm;
    dtarget = sin_t > T(0) ? cm + c * sm / sin_t : cm;
  }
  for (auto& v : out.data()) v *= s;
  return cosines.graph().emit("arc_margin", std::move(out), {cosines},
                              [cosines, label, s, dtarget](BasicGraph<T>& g, const BasicTensor<T>&,
                                                           const BasicTensor<T>& dy) {
                                auto gc = g.grad_buffer(cosines);
                                for (std::size_t j = 0; j < dy.size(); ++j)
                                  gc[j] += s * dy[j] * (j == label ? dtarget : T(1));
                              });
}

/// Cosines between the normalized embedding [D] and normalized class rows [K, D] -> [K].
template <class T>
BasicVar<T> class_cosines(BasicVar<T> embedding, BasicVar<T> class_weights) {
  const std::size_t d = embedding.size();
  if (class_weights.shape().size() != 2 || class_weights.shape()[1] != d)
    throw ContractError("arcface_loss: class weights " + numeric::to_string(class_weights.shape()) +
                        " incompatible with embedding of size " + std::to_string(d));
  auto e = numeric::l2_normalize(numeric::reshape(embedding, {1, d}));
  auto w = numeric::l2_normalize(class_weights);
  auto cos = numeric::matmul(e, numeric::transpose(w));
  return numeric::reshape(cos, {cos.size()});
}

template <class T>
BasicVar<T> arcface_loss(BasicVar<T> embedding, std::size_t label, BasicVar<T> class_weights,
                         const ArcFaceHead& head) {
  auto logits = arc_margin_logits(class_cosines(embedding, class_weights), label, head);
  return numeric::cross_entropy(logits, label);
}

/// Graph nodes of every term of the training objective.
template <class T>
struct LossTerms {
  BasicVar<T> d_pos, d_neg, l_con, l_arc_p1, l_arc_p2, l_metr, l_aar;
};

/// Scalar values of one step; the contrast fields are NaN for the baseline.
struct LossBreakdown {
  double d_pos = 0, d_neg = 0, l_con = 0, l_arc_p1 = 0, l_arc_p2 = 0, l_metr = 0, l_aar = 0;
  double lambda_neg = 1.0;
  bool has_contrast = true;
};

template <class T>
LossTerms<T> total_loss(const model::AarOutputs<T>& out, std::size_t label, BasicVar<T> class_weights,
                        const ArcFaceHead& head, double lambda_neg) {
  LossTerms<T> t;
  t.d_pos = d_pos(out.z0_o1, out.z17_o1);
  t.d_neg = d_neg(out.z0_o2, out.z17_o2);
  t.l_con = numeric::add(t.d_pos, numeric::scale(t.d_neg, T(lambda_neg)));
  t.l_arc_p1 = arcface_loss(out.p1, label, class_weights, head);
  t.l_arc_p2 = arcface_loss(out.p2, label, class_weights, head);
  t.l_metr = numeric::add(t.l_arc_p1, t.l_arc_p2);
  t.l_aar = numeric::add(t.l_metr, t.l_con);
  return t;
}

template <class T>
LossBreakdown values(const LossTerms<T>& t, double lambda_neg) {
  LossBreakdown b;
  b.lambda_neg = lambda_neg;
  b.d_pos = double(t.d_pos.value().item());
  b.d_neg = double(t.d_neg.value().item());
  b.l_arc_p1 = double(t.l_arc_p1.value().item());
  b.l_arc_p2 = double(t.l_arc_p2.value().item());
  // Composites are re-summed in double; the float graph sums differ by an ulp
  // of the total, which at s = 30 is several times 1e-6.
  b.l_con = b.d_pos + lambda_neg * b.d_neg;
  b.l_metr = b.l_arc_p1 + b.l_arc_p2;
  b.l_aar = b.l_metr + b.l_con;
  return b;
}

}  // namespace aar::losses
