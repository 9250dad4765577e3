#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stacktune/gradcheck.hpp"
#include "stacktune/heads.hpp"
#include "stacktune/ops.hpp"

// Randomized gradient-check cases for every autodiff primitive and every head.

namespace stacktune::gradcheck {

struct NamedCase {
  std::string name;
  std::function<Case(Rng&)> make;
};

namespace detail {

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

inline Shape random_shape(Rng& rng, std::size_t min_rank, std::size_t max_rank, std::size_t max_dim = 4) {
  Shape s(pick(rng, min_rank, max_rank));
  for (auto& d : s) d = pick(rng, 1, max_dim);
  return s;
}

// Wraps y = op(inputs) into a scalar loss with a fixed random projection.
// `weights` is created lazily from the first forward so the output shape
// need not be known up front.
inline Case projected(Rng& rng, std::vector<DTensor> inputs,
                      std::function<DTensor(const std::vector<DTensor>&)> op) {
  auto probe = [&] {
    NoGradGuard ng;
    return op(inputs);
  }();
  auto weights = random_tensor(rng, probe.shape(), -1.0, 1.0, false);
  Case c;
  c.inputs = inputs;
  c.loss = [inputs, op, weights] { return project(op(inputs), weights); };
  return c;
}

// Rows along the last axis with standard deviation at least `min_sd`, so that
// normalization is well conditioned at the finite-difference step.
inline DTensor spread_rows(Rng& rng, const Shape& shape, double min_sd) {
  const std::size_t h = shape.back(), rows = numel(shape) / h;
  std::vector<double> v(numel(shape));
  for (std::size_t r = 0; r < rows; ++r) {
    double sd = 0.0;
    while (sd < min_sd) {
      double mean = 0.0, sq = 0.0;
      for (std::size_t j = 0; j < h; ++j) mean += (v[r * h + j] = rng.uniform(-2.0, 2.0));
      mean /= double(h);
      for (std::size_t j = 0; j < h; ++j) sq += (v[r * h + j] - mean) * (v[r * h + j] - mean);
      sd = std::sqrt(sq / double(h));
    }
  }
  return DTensor::from(shape, std::move(v), true);
}

inline DTensor away_from_zero(Rng& rng, const Shape& shape, double lo, double hi) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(lo, hi);
  return DTensor::from(shape, std::move(v), true);
}

// Shape of `full` with some leading axes dropped and some axes set to 1.
inline Shape broadcastable_from(Rng& rng, const Shape& full) {
  Shape s(full.begin() + static_cast<std::ptrdiff_t>(pick(rng, 0, full.size())), full.end());
  for (auto& d : s) {
    if (rng.bernoulli(0.3)) d = 1;
  }
  return s;
}

}  // namespace detail

inline std::vector<NamedCase> primitive_cases() {
  using detail::pick;
  using detail::projected;
  using detail::random_shape;
  std::vector<NamedCase> cases;

  auto binary_case = [](std::string name, std::function<DTensor(const DTensor&, const DTensor&)> f,
                        bool positive_rhs) {
    return NamedCase{name, [f, positive_rhs](Rng& rng) {
                       const Shape a_shape = random_shape(rng, 1, 3);
                       const Shape b_shape =
                           rng.bernoulli(0.5) ? a_shape : detail::broadcastable_from(rng, a_shape);
                       auto a = random_tensor(rng, a_shape);
                       auto b = positive_rhs ? detail::away_from_zero(rng, b_shape, 0.5, 1.5)
                                             : random_tensor(rng, b_shape);
                       // Broadcasting is exercised on either side except for a divisor,
                       // which must stay away from zero.
                       if (!positive_rhs && rng.bernoulli(0.5)) std::swap(a, b);
                       return projected(rng, {a, b}, [f](const auto& in) { return f(in[0], in[1]); });
                     }};
  };
  cases.push_back(binary_case("add", [](const DTensor& a, const DTensor& b) { return add(a, b); }, false));
  cases.push_back(binary_case("sub", [](const DTensor& a, const DTensor& b) { return sub(a, b); }, false));
  cases.push_back(binary_case("mul", [](const DTensor& a, const DTensor& b) { return mul(a, b); }, false));
  cases.push_back(binary_case("div", [](const DTensor& a, const DTensor& b) { return div(a, b); }, true));

  cases.push_back({"scale", [](Rng& rng) {
                     const double c = rng.uniform(-2.0, 2.0);
                     return projected(rng, {random_tensor(rng, random_shape(rng, 1, 3))},
                                      [c](const auto& in) { return scale(in[0], c); });
                   }});
  cases.push_back({"add_scalar", [](Rng& rng) {
                     const double c = rng.uniform(-2.0, 2.0);
                     return projected(rng, {random_tensor(rng, random_shape(rng, 1, 3))},
                                      [c](const auto& in) { return add_scalar(in[0], c); });
                   }});
  cases.push_back({"one_minus", [](Rng& rng) {
                     return projected(rng, {random_tensor(rng, random_shape(rng, 1, 3))},
                                      [](const auto& in) { return one_minus(in[0]); });
                   }});
  cases.push_back({"broadcast_to", [](Rng& rng) {
                     const Shape full = random_shape(rng, 1, 4);
                     const Shape small = detail::broadcastable_from(rng, full);
                     return projected(rng, {random_tensor(rng, small)},
                                      [full](const auto& in) { return broadcast_to(in[0], full); });
                   }});
  cases.push_back({"matmul", [](Rng& rng) {
                     Shape a_shape = random_shape(rng, 1, 3);
                     const std::size_t m = pick(rng, 1, 4);
                     auto a = random_tensor(rng, a_shape);
                     auto b = random_tensor(rng, Shape{a_shape.back(), m});
                     return projected(rng, {a, b}, [](const auto& in) { return matmul(in[0], in[1]); });
                   }});
  cases.push_back({"bmm", [](Rng& rng) {
                     const std::size_t b = pick(rng, 1, 3), n = pick(rng, 1, 4), k = pick(rng, 1, 4),
                                       m = pick(rng, 1, 4);
                     return projected(rng, {random_tensor(rng, {b, n, k}), random_tensor(rng, {b, k, m})},
                                      [](const auto& in) { return bmm(in[0], in[1]); });
                   }});
  cases.push_back({"transpose", [](Rng& rng) {
                     const Shape s = random_shape(rng, 2, 4);
                     const int a0 = int(rng.below(s.size())), a1 = int(rng.below(s.size()));
                     return projected(rng, {random_tensor(rng, s)},
                                      [a0, a1](const auto& in) { return transpose(in[0], a0, a1); });
                   }});
  cases.push_back({"reshape", [](Rng& rng) {
                     const Shape s = random_shape(rng, 1, 3);
                     return projected(rng, {random_tensor(rng, s)}, [s](const auto& in) {
                       return reshape(in[0], Shape{numel(s)});
                     });
                   }});
  cases.push_back({"concat", [](Rng& rng) {
                     const Shape base = random_shape(rng, 1, 3);
                     const int axis = int(rng.below(base.size()));
                     std::vector<DTensor> parts;
                     const std::size_t count = pick(rng, 1, 3);
                     for (std::size_t i = 0; i < count; ++i) {
                       Shape s = base;
                       s[std::size_t(axis)] = pick(rng, 1, 3);
                       parts.push_back(random_tensor(rng, s));
                     }
                     return projected(rng, parts, [axis](const auto& in) { return concat(in, axis); });
                   }});
  cases.push_back({"slice", [](Rng& rng) {
                     const Shape s = random_shape(rng, 1, 3);
                     const int axis = int(rng.below(s.size()));
                     const std::size_t dim = s[std::size_t(axis)];
                     const std::size_t start = rng.below(dim);
                     const std::size_t len = 1 + rng.below(dim - start);
                     return projected(rng, {random_tensor(rng, s)}, [=](const auto& in) {
                       return slice(in[0], axis, start, len);
                     });
                   }});
  cases.push_back({"embedding", [](Rng& rng) {
                     const std::size_t vocab = pick(rng, 2, 6), h = pick(rng, 1, 4);
                     const Shape ids_shape = random_shape(rng, 1, 2);
                     std::vector<int> ids(numel(ids_shape));
                     for (auto& id : ids) id = int(rng.below(vocab));
                     return projected(rng, {random_tensor(rng, {vocab, h})}, [ids, ids_shape](const auto& in) {
                       return embedding(in[0], std::span<const int>(ids), ids_shape);
                     });
                   }});
  cases.push_back({"relu", [](Rng& rng) {
                     return projected(rng, {random_tensor(rng, random_shape(rng, 1, 3))},
                                      [](const auto& in) { return relu(in[0]); });
                   }});
  cases.push_back({"tanh", [](Rng& rng) {
                     return projected(rng, {random_tensor(rng, random_shape(rng, 1, 3), -2, 2)},
                                      [](const auto& in) { return tanh(in[0]); });
                   }});
  cases.push_back({"sigmoid", [](Rng& rng) {
                     return projected(rng, {random_tensor(rng, random_shape(rng, 1, 3), -3, 3)},
                                      [](const auto& in) { return sigmoid(in[0]); });
                   }});
  cases.push_back({"softmax", [](Rng& rng) {
                     const Shape s = random_shape(rng, 1, 3);
                     const int axis = int(rng.below(s.size()));
                     return projected(rng, {random_tensor(rng, s, -2, 2)},
                                      [axis](const auto& in) { return softmax(in[0], axis); });
                   }});
  cases.push_back({"log_softmax", [](Rng& rng) {
                     const Shape s = random_shape(rng, 1, 3);
                     const int axis = int(rng.below(s.size()));
                     return projected(rng, {random_tensor(rng, s, -2, 2)},
                                      [axis](const auto& in) { return log_softmax(in[0], axis); });
                   }});
  cases.push_back({"layer_norm", [](Rng& rng) {
                     Shape s = random_shape(rng, 1, 3);
                     s.back() = pick(rng, 2, 5);
                     const std::size_t h = s.back();
                     return projected(rng,
                                      {detail::spread_rows(rng, s, 0.5), random_tensor(rng, {h}, 0.5, 1.5),
                                       random_tensor(rng, {h})},
                                      [](const auto& in) { return layer_norm(in[0], in[1], in[2]); });
                   }});
  cases.push_back({"dropout", [](Rng& rng) {
                     const double p = rng.uniform(0.0, 0.9);
                     const std::uint64_t seed = rng.next_u64();
                     return projected(rng, {random_tensor(rng, random_shape(rng, 1, 3))},
                                      [p, seed](const auto& in) {
                                        Rng local(seed);
                                        return dropout(in[0], p, &local, true);
                                      });
                   }});
  cases.push_back({"cross_entropy", [](Rng& rng) {
                     const std::size_t n = pick(rng, 1, 5), c = pick(rng, 2, 5);
                     std::vector<int> targets(n);
                     for (auto& t : targets) t = rng.bernoulli(0.2) ? kIgnoreIndex : int(rng.below(c));
                     targets[0] = int(rng.below(c));
                     Case out;
                     out.inputs = {random_tensor(rng, {n, c}, -2, 2)};
                     auto x = out.inputs[0];
                     out.loss = [x, targets] { return cross_entropy(x, std::span<const int>(targets)); };
                     return out;
                   }});
  cases.push_back({"masked_fill", [](Rng& rng) {
                     const Shape s = random_shape(rng, 1, 3);
                     std::vector<std::uint8_t> mask(numel(s));
                     for (auto& m : mask) m = rng.bernoulli(0.4);
                     const double value = rng.uniform(-1, 1);
                     return projected(rng, {random_tensor(rng, s)}, [mask, value](const auto& in) {
                       return masked_fill(in[0], std::span<const std::uint8_t>(mask), value);
                     });
                   }});
  cases.push_back({"sum", [](Rng& rng) {
                     const Shape s = random_shape(rng, 1, 3);
                     const int axis = int(rng.below(s.size()));
                     const bool keep = rng.bernoulli(0.5);
                     return projected(rng, {random_tensor(rng, s)},
                                      [axis, keep](const auto& in) { return sum(in[0], axis, keep); });
                   }});
  cases.push_back({"mean", [](Rng& rng) {
                     const Shape s = random_shape(rng, 1, 3);
                     const int axis = int(rng.below(s.size()));
                     return projected(rng, {random_tensor(rng, s)},
                                      [axis](const auto& in) { return mean(in[0], axis); });
                   }});
  cases.push_back({"sum_all", [](Rng& rng) {
                     return projected(rng, {random_tensor(rng, random_shape(rng, 1, 3))},
                                      [](const auto& in) { return sum_all(in[0]); });
                   }});
  cases.push_back({"max", [](Rng& rng) {
                     const Shape s = random_shape(rng, 1, 3);
                     const int axis = int(rng.below(s.size()));
                     return projected(rng, {random_tensor(rng, s)},
                                      [axis](const auto& in) { return max(in[0], axis); });
                   }});
  cases.push_back({"cosine_similarity", [](Rng& rng) {
                     const Shape s = random_shape(rng, 1, 3);
                     const int axis = int(rng.below(s.size()));
                     // Entries bounded away from zero keep every norm at least 1.
                     return projected(rng,
                                      {detail::away_from_zero(rng, s, 1.0, 2.0),
                                       detail::away_from_zero(rng, s, 1.0, 2.0)},
                                      [axis](const auto& in) { return cosine_similarity(in[0], in[1], axis); });
                   }});
  cases.push_back({"pairwise_cosine", [](Rng& rng) {
                     const std::size_t b = pick(rng, 1, 2), s1 = pick(rng, 1, 4), s2 = pick(rng, 1, 4),
                                       d = pick(rng, 1, 4);
                     return projected(rng,
                                      {detail::away_from_zero(rng, {b, s1, d}, 1.0, 2.0),
                                       detail::away_from_zero(rng, {b, s2, d}, 1.0, 2.0)},
                                      [](const auto& in) { return pairwise_cosine(in[0], in[1]); });
                   }});
  cases.push_back({"abs_floor", [](Rng& rng) {
                     const double eps = rng.uniform(0.05, 0.3);
                     return projected(rng, {random_tensor(rng, random_shape(rng, 1, 3))},
                                      [eps](const auto& in) { return abs_floor(in[0], eps); });
                   }});
  return cases;
}

/// Desk-sized head spec for gradient checks.
inline HeadSpec tiny_head_spec(HeadKind kind) {
  HeadSpec spec;
  spec.kind = kind;
  spec.num_classes = 3;
  spec.hidden = 4;
  spec.lstm_hidden = 2;
  spec.perspectives = 2;
  spec.attention_heads = 2;
  spec.dropout_p = 0.1;
  return spec;
}

namespace detail {

// Mask with a random real length in [1, seq] per row.
inline SeqMask random_mask(Rng& rng, std::size_t batch, std::size_t seq) {
  SeqMask m = SeqMask::all_real(batch, seq);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = pick(rng, 1, seq);
    for (std::size_t s = len; s < seq; ++s) m.real[b * seq + s] = 0;
  }
  return m;
}

}  // namespace detail

/// One case per draw: a freshly initialized head on random encoder outputs
/// (with random padding), evaluated in eval mode. Inputs are the encoder
/// outputs and every head parameter.
inline NamedCase head_case(HeadKind kind) {
  return {to_string(kind), [kind](Rng& rng) {
            const std::size_t h = 4, batch = 2;
            Rng init(rng.next_u64());
            std::shared_ptr<Head<Scalar>> head = make_head<Scalar>(tiny_head_spec(kind), h, init);
            HeadInput<Scalar> in;
            const std::size_t seq = detail::pick(rng, 2, 4);
            in.enc = random_tensor(rng, {batch, seq, h});
            in.mask = detail::random_mask(rng, batch, seq);
            std::vector<DTensor> inputs{in.enc};
            if (is_pair_head(kind)) {
              const std::size_t seq_b = detail::pick(rng, 2, 4);
              in.enc_b = random_tensor(rng, {batch, seq_b, h});
              in.mask_b = detail::random_mask(rng, batch, seq_b);
              inputs.push_back(in.enc_b);
            }
            for (const auto& p : head->params()) {
              // Perspective weights near zero shrink cosine operands toward the
              // singular point; draw their magnitudes from [0.5, 1.5] instead.
              if (p.name.find(".matching.") != std::string::npos) {
                auto v = p.tensor;
                for (auto& x : v.data()) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.5, 1.5);
              }
              inputs.push_back(p.tensor);
            }
            return detail::projected(rng, inputs, [head, in](const auto&) {
              return head->forward(in, false, nullptr);
            });
          }};
}

inline std::vector<NamedCase> head_cases() {
  std::vector<NamedCase> cases;
  for (HeadKind k : all_head_kinds()) cases.push_back(head_case(k));
  return cases;
}

/// Primitives followed by heads.
inline std::vector<NamedCase> all_cases() {
  auto cases = primitive_cases();
  for (auto& c : head_cases()) cases.push_back(std::move(c));
  return cases;
}

}  // namespace stacktune::gradcheck
