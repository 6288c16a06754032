#include "vtr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vtr/errors.hpp"

namespace vtr {

namespace {

using StoragePtr = std::shared_ptr<detail::Storage>;

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

std::vector<double> transpose(const double* a, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
  return t;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

Tensor finished(Tensor out, const char* op) {
  if (!out.all_finite()) throw NumericError(std::string(op) + ": produced a non-finite value");
  return out;
}

void accumulate(const StoragePtr& dst, std::span<const double> src) {
  dst->ensure_grad();
  for (std::size_t i = 0; i < src.size(); ++i) dst->grad[i] += src[i];
}

std::size_t last_dim(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_string(a.shape()) + " * " +
                     shape_string(b.shape()));
  }
  Tensor out(Shape{m, n});
  gemm_nn(a.values().data(), b.values().data(), out.mutable_values().data(), m, k, n);
  out = finished(std::move(out), "matmul");
  if (tape.tracks({&a, &b})) {
    tape.record(out, [sa = a.storage(), sb = b.storage(), so = out.storage(), m, k, n] {
      if (sa->requires_grad) {
        sa->ensure_grad();
        const auto bt = transpose(sb->data.data(), k, n);
        gemm_nn(so->grad.data(), bt.data(), sa->grad.data(), m, n, k);
      }
      if (sb->requires_grad) {
        sb->ensure_grad();
        gemm_tn(sa->data.data(), so->grad.data(), sb->grad.data(), m, k, n);
      }
    });
  }
  return out;
}

Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: inner dimensions disagree for " + shape_string(a.shape()) + " * " +
                     shape_string(b.shape()) + "^T");
  }
  Tensor out(Shape{m, n});
  const auto bt = transpose(b.values().data(), n, k);
  gemm_nn(a.values().data(), bt.data(), out.mutable_values().data(), m, k, n);
  out = finished(std::move(out), "matmul_nt");
  if (tape.tracks({&a, &b})) {
    tape.record(out, [sa = a.storage(), sb = b.storage(), so = out.storage(), m, k, n] {
      if (sa->requires_grad) {
        sa->ensure_grad();
        gemm_nn(so->grad.data(), sb->data.data(), sa->grad.data(), m, n, k);
      }
      if (sb->requires_grad) {
        sb->ensure_grad();
        gemm_tn(so->grad.data(), sa->data.data(), sb->grad.data(), m, n, k);
      }
    });
  }
  return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t rows = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                     shape_string(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{out_dim}) {
    throw ShapeError("linear: bias " + shape_string(bias.shape()) + " does not match weight " +
                     shape_string(weight.shape()));
  }
  Tensor out(Shape{rows, out_dim});
  auto y = out.mutable_values();
  if (has_bias) {
    const auto b = bias.values();
    for (std::size_t r = 0; r < rows; ++r) std::copy(b.begin(), b.end(), y.begin() + r * out_dim);
  }
  const auto wt = transpose(weight.values().data(), out_dim, in);
  gemm_nn(x.values().data(), wt.data(), y.data(), rows, in, out_dim);
  out = finished(std::move(out), "linear");
  const Tensor none;
  if (tape.tracks({&x, &weight, has_bias ? &bias : &none})) {
    tape.record(out, [sx = x.storage(), sw = weight.storage(), sb = bias.storage(), so = out.storage(), rows,
                      in, out_dim] {
      const double* dy = so->grad.data();
      if (sx->requires_grad) {
        sx->ensure_grad();
        gemm_nn(dy, sw->data.data(), sx->grad.data(), rows, out_dim, in);
      }
      if (sw->requires_grad) {
        sw->ensure_grad();
        gemm_tn(dy, sx->data.data(), sw->grad.data(), rows, out_dim, in);
      }
      if (sb && sb->requires_grad) {
        sb->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < out_dim; ++o) sb->grad[o] += dy[r * out_dim + o];
      }
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape(), std::vector<double>(a.values().begin(), a.values().end()));
  auto y = out.mutable_values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  out = finished(std::move(out), "add");
  if (tape.tracks({&a, &b})) {
    tape.record(out, [sa = a.storage(), sb = b.storage(), so = out.storage()] {
      if (sa->requires_grad) accumulate(sa, so->grad);
      if (sb->requires_grad) accumulate(sb, so->grad);
    });
  }
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape(), std::vector<double>(a.values().begin(), a.values().end()));
  auto y = out.mutable_values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  out = finished(std::move(out), "sub");
  if (tape.tracks({&a, &b})) {
    tape.record(out, [sa = a.storage(), sb = b.storage(), so = out.storage()] {
      if (sa->requires_grad) accumulate(sa, so->grad);
      if (sb->requires_grad) {
        sb->ensure_grad();
        for (std::size_t i = 0; i < so->grad.size(); ++i) sb->grad[i] -= so->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto y = out.mutable_values();
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  out = finished(std::move(out), "mul");
  if (tape.tracks({&a, &b})) {
    tape.record(out, [sa = a.storage(), sb = b.storage(), so = out.storage()] {
      if (sa->requires_grad) {
        sa->ensure_grad();
        for (std::size_t i = 0; i < so->grad.size(); ++i) sa->grad[i] += so->grad[i] * sb->data[i];
      }
      if (sb->requires_grad) {
        sb->ensure_grad();
        for (std::size_t i = 0; i < so->grad.size(); ++i) sb->grad[i] += so->grad[i] * sa->data[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
  Tensor out(a.shape());
  auto y = out.mutable_values();
  const auto av = a.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * factor;
  out = finished(std::move(out), "scale");
  if (tape.tracks({&a})) {
    tape.record(out, [sa = a.storage(), so = out.storage(), factor] {
      sa->ensure_grad();
      for (std::size_t i = 0; i < so->grad.size(); ++i) sa->grad[i] += so->grad[i] * factor;
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  Tensor out = finished(Tensor::scalar(total), "sum");
  if (tape.tracks({&a})) {
    tape.record(out, [sa = a.storage(), so = out.storage()] {
      sa->ensure_grad();
      const double g = so->grad[0];
      for (auto& v : sa->grad) v += g;
    });
  }
  return out;
}

Tensor reshape(Tape& tape, const Tensor& a, Shape shape) {
  if (shape_volume(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()));
  if (tape.tracks({&a})) {
    tape.record(out, [sa = a.storage(), so = out.storage()] { accumulate(sa, so->grad); });
  }
  return out;
}

Tensor softmax_lastdim(Tape& tape, const Tensor& x) {
  if (!x.defined() || x.size() == 0) throw ShapeError("softmax_lastdim: empty tensor");
  const std::size_t n = last_dim(x);
  const std::size_t rows = x.size() / n;
  Tensor out(x.shape());
  auto y = out.mutable_values();
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = xv.data() + r * n;
    double* yi = y.data() + r * n;
    const double peak = *std::max_element(xi, xi + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yi[j] = std::exp(xi[j] - peak);
      total += yi[j];
    }
    for (std::size_t j = 0; j < n; ++j) yi[j] /= total;
  }
  out = finished(std::move(out), "softmax_lastdim");
  if (tape.tracks({&x})) {
    tape.record(out, [sx = x.storage(), so = out.storage(), rows, n] {
      sx->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* yi = so->data.data() + r * n;
        const double* gi = so->grad.data() + r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += gi[j] * yi[j];
        double* dx = sx->grad.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) dx[j] += yi[j] * (gi[j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t n = last_dim(x);
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw ShapeError("layer_norm: gamma " + shape_string(gamma.shape()) + " / beta " +
                     shape_string(beta.shape()) + " do not match input " + shape_string(x.shape()));
  }
  const std::size_t rows = x.size() / n;
  Tensor out(x.shape());
  auto y = out.mutable_values();
  const auto xv = x.values(), g = gamma.values(), b = beta.values();
  auto normalized = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = xv.data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xi[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = rstd;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xi[j] - mean) * rstd;
      (*normalized)[r * n + j] = h;
      y[r * n + j] = h * g[j] + b[j];
    }
  }
  out = finished(std::move(out), "layer_norm");
  if (tape.tracks({&x, &gamma, &beta})) {
    tape.record(out, [sx = x.storage(), sg = gamma.storage(), sb = beta.storage(), so = out.storage(), normalized,
                      inv_std, rows, n] {
      const auto& h = *normalized;
      const double* dy = so->grad.data();
      if (sg->requires_grad) {
        sg->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) sg->grad[j] += dy[r * n + j] * h[r * n + j];
      }
      if (sb->requires_grad) {
        sb->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) sb->grad[j] += dy[r * n + j];
      }
      if (sx->requires_grad) {
        sx->ensure_grad();
        std::vector<double> dh(n);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dh[j] = dy[r * n + j] * sg->data[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * h[r * n + j];
          }
          mean_dh /= static_cast<double>(n);
          mean_dh_h /= static_cast<double>(n);
          const double rstd = (*inv_std)[r];
          for (std::size_t j = 0; j < n; ++j)
            sx->grad[r * n + j] += rstd * (dh[j] - mean_dh - h[r * n + j] * mean_dh_h);
        }
      }
    });
  }
  return out;
}

Tensor gelu(Tape& tape, const Tensor& x) {
  Tensor out(x.shape());
  auto y = out.mutable_values();
  const auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = xv[i] * 0.5 * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
  }
  out = finished(std::move(out), "gelu");
  if (tape.tracks({&x})) {
    tape.record(out, [sx = x.storage(), so = out.storage()] {
      sx->ensure_grad();
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < so->grad.size(); ++i) {
        const double v = sx->data[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        sx->grad[i] += so->grad[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor l2_normalize_rows(Tape& tape, const Tensor& x) {
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t rows = x.dim(0), n = x.dim(1);
  Tensor out(x.shape());
  auto y = out.mutable_values();
  const auto xv = x.values();
  auto norms = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) sq += xv[r * n + j] * xv[r * n + j];
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0)) throw DegeneracyError("l2_normalize_rows: row " + std::to_string(r) + " has zero norm");
    (*norms)[r] = norm;
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = xv[r * n + j] / norm;
  }
  out = finished(std::move(out), "l2_normalize_rows");
  if (tape.tracks({&x})) {
    tape.record(out, [sx = x.storage(), so = out.storage(), norms, rows, n] {
      sx->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* yr = so->data.data() + r * n;
        const double* gr = so->grad.data() + r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
        for (std::size_t j = 0; j < n; ++j) sx->grad[r * n + j] += (gr[j] - yr[j] * dot) / (*norms)[r];
      }
    });
  }
  return out;
}

Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_rows");
  const std::size_t cols = x.dim(1);
  if (begin >= end || end > x.dim(0)) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_string(x.shape()));
  }
  const auto xv = x.values();
  Tensor out(Shape{end - begin, cols},
             std::vector<double>(xv.begin() + begin * cols, xv.begin() + end * cols));
  if (tape.tracks({&x})) {
    tape.record(out, [sx = x.storage(), so = out.storage(), begin, cols] {
      sx->ensure_grad();
      for (std::size_t i = 0; i < so->grad.size(); ++i) sx->grad[begin * cols + i] += so->grad[i];
    });
  }
  return out;
}

Tensor concat_rows(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts.front().dim(1);
  std::size_t rows = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != cols) {
      throw ShapeError("concat_rows: column mismatch " + shape_string(parts.front().shape()) + " vs " +
                       shape_string(p.shape()));
    }
    rows += p.dim(0);
    tracked = tracked || tape.tracks({&p});
  }
  std::vector<double> values;
  values.reserve(rows * cols);
  for (const auto& p : parts) values.insert(values.end(), p.values().begin(), p.values().end());
  Tensor out(Shape{rows, cols}, std::move(values));
  if (tracked) {
    std::vector<StoragePtr> inputs;
    for (const auto& p : parts) inputs.push_back(p.storage());
    tape.record(out, [inputs = std::move(inputs), so = out.storage()] {
      std::size_t offset = 0;
      for (const auto& in : inputs) {
        const std::size_t n = in->data.size();
        if (in->requires_grad) {
          in->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) in->grad[i] += so->grad[offset + i];
        }
        offset += n;
      }
    });
  }
  return out;
}

Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const std::uint32_t> index) {
  require_rank(x, 2, "gather_rows");
  if (index.empty()) throw ShapeError("gather_rows: empty index");
  const std::size_t cols = x.dim(1), rows = x.dim(0);
  Tensor out(Shape{index.size(), cols});
  auto y = out.mutable_values();
  const auto xv = x.values();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) {
      throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of range for " +
                       shape_string(x.shape()));
    }
    std::copy_n(xv.begin() + index[i] * cols, cols, y.begin() + i * cols);
  }
  if (tape.tracks({&x})) {
    tape.record(out, [sx = x.storage(), so = out.storage(), idx = std::vector<std::uint32_t>(index.begin(), index.end()),
                      cols] {
      sx->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j) sx->grad[idx[i] * cols + j] += so->grad[i * cols + j];
    });
  }
  return out;
}

Tensor mean_rows(Tape& tape, const Tensor& x) {
  require_rank(x, 2, "mean_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out(Shape{cols});
  auto y = out.mutable_values();
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) y[j] += xv[r * cols + j];
  for (auto& v : y) v /= static_cast<double>(rows);
  if (tape.tracks({&x})) {
    tape.record(out, [sx = x.storage(), so = out.storage(), rows, cols] {
      sx->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) sx->grad[r * cols + j] += so->grad[j] / static_cast<double>(rows);
    });
  }
  return out;
}

void AttentionGroups::add(std::span<const std::uint32_t> members) {
  if (members.empty()) throw ContractError("attention group must not be empty");
  members_.insert(members_.end(), members.begin(), members.end());
  offsets_.push_back(members_.size());
  for (auto m : members) max_index_ = std::max<std::size_t>(max_index_, m);
}

Tensor group_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                       const AttentionGroups& groups, std::size_t heads, AttentionStats* stats) {
  require_rank(q, 2, "group_attention");
  require_same_shape(q, k, "group_attention");
  require_same_shape(q, v, "group_attention");
  const std::size_t tokens = q.dim(0), dim = q.dim(1);
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("group_attention: width " + std::to_string(dim) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  if (groups.count() > 0 && groups.max_index() >= tokens) {
    throw ShapeError("group_attention: group member out of range for " + shape_string(q.shape()));
  }
  const std::size_t hd = dim / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(hd));

  // Each token's output is the mean over the groups containing it.
  auto weight = std::make_shared<std::vector<double>>(tokens, 0.0);
  for (std::size_t g = 0; g < groups.count(); ++g)
    for (auto t : groups.group(g)) (*weight)[t] += 1.0;
  for (auto& w : *weight) w = w > 0.0 ? 1.0 / w : 0.0;

  // Attention probabilities per group, laid out [head][query][key].
  auto probs = std::make_shared<std::vector<std::vector<double>>>(groups.count());
  Tensor out(Shape{tokens, dim});
  auto y = out.mutable_values();
  const auto qv = q.values(), kv = k.values(), vv = v.values();
  std::uint64_t score_count = 0;
  double max_err = 0.0;
  bool non_negative = true;
  for (std::size_t g = 0; g < groups.count(); ++g) {
    const auto members = groups.group(g);
    const std::size_t n = members.size();
    auto& p = (*probs)[g];
    p.assign(heads * n * n, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * hd;
      for (std::size_t i = 0; i < n; ++i) {
        const double* qi = qv.data() + members[i] * dim + off;
        double* row = p.data() + (h * n + i) * n;
        double peak = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
          const double* kj = kv.data() + members[j] * dim + off;
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
          row[j] = s * scale_factor;
          peak = std::max(peak, row[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          row[j] = std::exp(row[j] - peak);
          total += row[j];
        }
        double check = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          row[j] /= total;
          check += row[j];
          non_negative = non_negative && row[j] >= 0.0;
        }
        max_err = std::max(max_err, std::abs(check - 1.0));
        const double w = (*weight)[members[i]];
        double* yi = y.data() + members[i] * dim + off;
        for (std::size_t j = 0; j < n; ++j) {
          const double pw = row[j] * w;
          const double* vj = vv.data() + members[j] * dim + off;
          for (std::size_t c = 0; c < hd; ++c) yi[c] += pw * vj[c];
        }
      }
      score_count += n * n;
    }
  }
  if (stats) {
    stats->score_count += score_count;
    stats->max_row_sum_error = std::max(stats->max_row_sum_error, max_err);
    stats->non_negative = stats->non_negative && non_negative;
  }
  out = finished(std::move(out), "group_attention");

  if (tape.tracks({&q, &k, &v})) {
    tape.record(out, [sq = q.storage(), sk = k.storage(), sv = v.storage(), so = out.storage(), groups_copy = groups, probs, weight, heads, hd, dim, scale_factor] {
      sq->ensure_grad();
      sk->ensure_grad();
      sv->ensure_grad();
      const double* dy = so->grad.data();
      std::vector<double> dp;
      for (std::size_t g = 0; g < groups_copy.count(); ++g) {
        const auto members = groups_copy.group(g);
        const std::size_t n = members.size();
        const auto& p = (*probs)[g];
        dp.assign(n, 0.0);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * hd;
          for (std::size_t i = 0; i < n; ++i) {
            const double* row = p.data() + (h * n + i) * n;
            const double w = (*weight)[members[i]];
            const double* gi = dy + members[i] * dim + off;
            // dV_j += w p_ij dY_i ; dP_ij = w dY_i . V_j
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double* vj = sv->data.data() + members[j] * dim + off;
              double* dvj = sv->grad.data() + members[j] * dim + off;
              const double pw = row[j] * w;
              double acc = 0.0;
              for (std::size_t c = 0; c < hd; ++c) {
                dvj[c] += pw * gi[c];
                acc += gi[c] * vj[c];
              }
              dp[j] = acc * w;
              dot += dp[j] * row[j];
            }
            const double* qi = sq->data.data() + members[i] * dim + off;
            double* dqi = sq->grad.data() + members[i] * dim + off;
            for (std::size_t j = 0; j < n; ++j) {
              const double dsij = row[j] * (dp[j] - dot) * scale_factor;
              if (dsij == 0.0) continue;
              const double* kj = sk->data.data() + members[j] * dim + off;
              double* dkj = sk->grad.data() + members[j] * dim + off;
              for (std::size_t c = 0; c < hd; ++c) {
                dqi[c] += dsij * kj[c];
                dkj[c] += dsij * qi[c];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace vtr
