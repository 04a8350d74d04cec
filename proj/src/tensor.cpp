#include "uqg/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace uqg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::size_t rows_of(const Shape& s) {
  if (s.size() <= 1) return 1;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

std::size_t cols_of(const Shape& s) { return s.empty() ? 1 : s.back(); }

std::size_t product(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_error(Op op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op_name(op)) + ": shape mismatch " + shape_string(a) +
                              " vs " + shape_string(b));
}

bool finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Uniform [0,1) from the top 53 bits; independent of the standard library's
// distribution implementations.
double unit_draw(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

ConstMap as_matrix(const Tensor& t) { return ConstMap(t.values().data(), t.rows(), t.cols()); }

}  // namespace

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

const char* op_name(Op op) {
  switch (op) {
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Mul: return "elementwise-multiply";
    case Op::Concat: return "concat-last-axis";
    case Op::StackRows: return "stack-rows";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softmax: return "row-softmax";
    case Op::Embedding: return "embedding-lookup";
    case Op::MaxPoolRows: return "max-pool-over-rows";
    case Op::Dropout: return "dropout";
    case Op::Scale: return "scalar-multiply";
    case Op::SliceRows: return "slice-rows";
    case Op::Sum: return "sum";
    case Op::Log: return "log";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = product(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
  for (auto d : shape)
    if (d == 0) throw std::invalid_argument("tensor: zero dimension in " + shape_string(shape));
  if (product(shape) != values.size())
    throw std::invalid_argument("tensor: shape " + shape_string(shape) + " does not hold " +
                                std::to_string(values.size()) + " values");
  auto data = std::make_shared<TensorData>();
  data->shape = std::move(shape);
  data->values = std::move(values);
  data->requires_grad = requires_grad;
  return Tensor(std::move(data));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

std::size_t Tensor::rows() const { return rows_of(data_->shape); }
std::size_t Tensor::cols() const { return cols_of(data_->shape); }

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item: tensor of shape " + shape_string(shape()));
  return data_->values[0];
}

Tensor Tensor::clone() const { return from(shape(), data_->values, requires_grad()); }

// ---------------------------------------------------------------------------
// GradientMap

const std::vector<double>* GradientMap::find(const Tensor& t) const {
  auto it = grads_.find(t.id());
  return it == grads_.end() ? nullptr : &it->second;
}

std::vector<double>& GradientMap::slot(const Tensor& t) {
  auto& g = grads_[t.id()];
  if (g.empty()) g.assign(t.size(), 0.0);
  return g;
}

void GradientMap::accumulate(const GradientMap& other) {
  for (const auto& [key, g] : other.grads_) {
    auto& mine = grads_[key];
    if (mine.empty()) {
      mine = g;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) mine[i] += g[i];
    }
  }
}

void GradientMap::scale(double factor) {
  for (auto& [key, g] : grads_)
    for (auto& x : g) x *= factor;
}

bool GradientMap::all_finite() const {
  return std::all_of(grads_.begin(), grads_.end(), [](const auto& kv) { return finite(kv.second); });
}

double GradientMap::squared_norm() const {
  double s = 0.0;
  for (const auto& [key, g] : grads_)
    for (double x : g) s += x * x;
  return s;
}

// ---------------------------------------------------------------------------
// Forward kernels

namespace {

void forward(TapeEntry& e) {
  auto& out = e.output;
  auto* y = out.mutable_values().data();
  const auto& in = e.inputs;
  switch (e.op) {
    case Op::MatMul: {
      auto a = as_matrix(in[0]);
      auto b = as_matrix(in[1]);
      MutMap c(y, out.rows(), out.cols());
      if (!e.trans_a && !e.trans_b) c.noalias() = a * b;
      else if (e.trans_a && !e.trans_b) c.noalias() = a.transpose() * b;
      else if (!e.trans_a && e.trans_b) c.noalias() = a * b.transpose();
      else c.noalias() = a.transpose() * b.transpose();
      break;
    }
    case Op::Add: {
      auto a = in[0].values();
      auto b = in[1].values();
      if (b.size() == a.size()) {
        for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
      } else if (b.size() == 1) {
        for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[0];
      } else {
        std::size_t c = b.size();
        for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i % c];
      }
      break;
    }
    case Op::Mul: {
      auto a = in[0].values();
      auto b = in[1].values();
      for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
      break;
    }
    case Op::Concat: {
      std::size_t rows = out.rows();
      std::size_t width = out.cols();
      std::size_t offset = 0;
      for (const auto& part : in) {
        std::size_t c = part.cols();
        auto v = part.values();
        for (std::size_t r = 0; r < rows; ++r)
          std::copy_n(v.data() + r * c, c, y + r * width + offset);
        offset += c;
      }
      break;
    }
    case Op::StackRows: {
      std::size_t offset = 0;
      for (const auto& part : in) {
        std::copy(part.values().begin(), part.values().end(), y + offset);
        offset += part.size();
      }
      break;
    }
    case Op::Tanh: {
      auto x = in[0].values();
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
      break;
    }
    case Op::Sigmoid: {
      auto x = in[0].values();
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
      break;
    }
    case Op::Softmax: {
      auto x = in[0].values();
      std::size_t rows = out.rows(), cols = out.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * cols;
        double* yr = y + r * cols;
        double m = *std::max_element(xr, xr + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += (yr[c] = std::exp(xr[c] - m));
        for (std::size_t c = 0; c < cols; ++c) yr[c] /= z;
      }
      break;
    }
    case Op::Embedding: {
      auto table = in[0].values();
      std::size_t d = in[0].cols();
      for (std::size_t i = 0; i < e.ids.size(); ++i)
        std::copy_n(table.data() + static_cast<std::size_t>(e.ids[i]) * d, d, y + i * d);
      break;
    }
    case Op::MaxPoolRows: {
      auto x = in[0].values();
      std::size_t rows = in[0].rows(), cols = in[0].cols();
      e.argmax.assign(cols, 0);
      for (std::size_t c = 0; c < cols; ++c) {
        std::size_t best = 0;
        for (std::size_t r = 1; r < rows; ++r)
          if (x[r * cols + c] > x[best * cols + c]) best = r;
        e.argmax[c] = best;
        y[c] = x[best * cols + c];
      }
      break;
    }
    case Op::Dropout: {
      auto x = in[0].values();
      std::mt19937_64 gen(e.seed);
      e.mask.resize(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        e.mask[i] = unit_draw(gen) < e.factor ? 1.0 / e.factor : 0.0;
        y[i] = x[i] * e.mask[i];
      }
      break;
    }
    case Op::Scale: {
      auto x = in[0].values();
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = e.factor * x[i];
      break;
    }
    case Op::SliceRows: {
      std::size_t c = in[0].cols();
      auto x = in[0].values();
      std::copy(x.begin() + e.begin * c, x.begin() + e.end * c, y);
      break;
    }
    case Op::Sum: {
      auto x = in[0].values();
      y[0] = std::accumulate(x.begin(), x.end(), 0.0);
      break;
    }
    case Op::Log: {
      auto x = in[0].values();
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::log(x[i]);
      break;
    }
  }
}

void add_into(std::vector<double>& dst, std::span<const double> src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

void Tape::check_inputs(const TapeEntry& entry) {
  for (const auto& t : entry.inputs) {
    if (!t.defined()) throw std::invalid_argument(std::string(op_name(entry.op)) + ": undefined input");
    if (!t.is_leaf()) continue;  // outputs are verified when produced
    if (checked_leaves_.count(t.id())) continue;
    if (!finite(t.values()))
      throw std::invalid_argument(std::string(op_name(entry.op)) + ": non-finite input");
    checked_leaves_.insert(t.id());
  }
}

Tensor Tape::push(TapeEntry entry, Shape out_shape) {
  check_inputs(entry);
  auto data = std::make_shared<TensorData>();
  data->shape = std::move(out_shape);
  data->values.assign(product(data->shape), 0.0);
  data->leaf = false;
  data->requires_grad = std::any_of(entry.inputs.begin(), entry.inputs.end(),
                                    [](const Tensor& t) { return t.requires_grad(); });
  entry.output = Tensor(std::move(data));
  forward(entry);
  if (!finite(entry.output.values()))
    throw std::invalid_argument(std::string(op_name(entry.op)) + ": non-finite output");
  Tensor out = entry.output;
  if (record_) entries_.push_back(std::move(entry));
  return out;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  std::size_t m = trans_a ? a.cols() : a.rows();
  std::size_t k = trans_a ? a.rows() : a.cols();
  std::size_t k2 = trans_b ? b.cols() : b.rows();
  std::size_t n = trans_b ? b.rows() : b.cols();
  if (k != k2) shape_error(Op::MatMul, a.shape(), b.shape());
  TapeEntry e{Op::MatMul, {a, b}, {}};
  e.trans_a = trans_a;
  e.trans_b = trans_b;
  return push(std::move(e), {m, n});
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  bool same = a.rows() == b.rows() && a.cols() == b.cols();
  bool ok = same || b.size() == 1 || (b.rows() == 1 && b.cols() == a.cols());
  if (!ok) shape_error(Op::Add, a.shape(), b.shape());
  return push(TapeEntry{Op::Add, {a, b}, {}}, a.shape());
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(Op::Mul, a.shape(), b.shape());
  return push(TapeEntry{Op::Mul, {a, b}, {}}, a.shape());
}

Tensor Tape::concat(std::initializer_list<Tensor> parts) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor Tape::concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat-last-axis: no inputs");
  std::size_t rows = parts[0].rows();
  std::size_t width = 0;
  bool all_rank1 = true;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_error(Op::Concat, parts[0].shape(), p.shape());
    width += p.cols();
    all_rank1 = all_rank1 && p.shape().size() == 1;
  }
  Shape shape = all_rank1 ? Shape{width} : Shape{rows, width};
  return push(TapeEntry{Op::Concat, {parts.begin(), parts.end()}, {}}, std::move(shape));
}

Tensor Tape::stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw std::invalid_argument("stack-rows: no inputs");
  std::size_t cols = rows[0].cols();
  std::size_t total = 0;
  for (const auto& r : rows) {
    if (r.cols() != cols) shape_error(Op::StackRows, rows[0].shape(), r.shape());
    total += r.rows();
  }
  return push(TapeEntry{Op::StackRows, {rows.begin(), rows.end()}, {}}, {total, cols});
}

Tensor Tape::tanh(const Tensor& x) { return push(TapeEntry{Op::Tanh, {x}, {}}, x.shape()); }

Tensor Tape::sigmoid(const Tensor& x) { return push(TapeEntry{Op::Sigmoid, {x}, {}}, x.shape()); }

Tensor Tape::softmax(const Tensor& x) { return push(TapeEntry{Op::Softmax, {x}, {}}, x.shape()); }

Tensor Tape::embedding(const Tensor& table, std::span<const int> ids) {
  if (ids.empty()) throw std::invalid_argument("embedding-lookup: empty id list");
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows())
      throw std::invalid_argument("embedding-lookup: id " + std::to_string(id) +
                                  " out of range for table " + shape_string(table.shape()));
  TapeEntry e{Op::Embedding, {table}, {}};
  e.ids.assign(ids.begin(), ids.end());
  return push(std::move(e), {ids.size(), table.cols()});
}

Tensor Tape::max_pool_rows(const Tensor& x) {
  return push(TapeEntry{Op::MaxPoolRows, {x}, {}}, {1, x.cols()});
}

Tensor Tape::dropout(const Tensor& x, double keep, std::uint64_t seed) {
  if (!(keep > 0.0 && keep <= 1.0))
    throw std::invalid_argument("dropout: keep probability must be in (0, 1]");
  TapeEntry e{Op::Dropout, {x}, {}};
  e.factor = keep;
  e.seed = seed;
  return push(std::move(e), x.shape());
}

Tensor Tape::scale(const Tensor& x, double factor) {
  TapeEntry e{Op::Scale, {x}, {}};
  e.factor = factor;
  return push(std::move(e), x.shape());
}

Tensor Tape::slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (begin >= end || end > x.rows())
    throw std::invalid_argument("slice-rows: range [" + std::to_string(begin) + ", " +
                                std::to_string(end) + ") invalid for " + shape_string(x.shape()));
  TapeEntry e{Op::SliceRows, {x}, {}};
  e.begin = begin;
  e.end = end;
  return push(std::move(e), {end - begin, x.cols()});
}

Tensor Tape::sum(const Tensor& x) { return push(TapeEntry{Op::Sum, {x}, {}}, {1}); }

Tensor Tape::log(const Tensor& x) {
  for (double v : x.values())
    if (!(v > 0.0)) throw std::invalid_argument("log: non-positive input");
  return push(TapeEntry{Op::Log, {x}, {}}, x.shape());
}

void Tape::replay() {
  for (auto& e : entries_) forward(e);
}

GradientMap Tape::backward(const Tensor& loss) const {
  if (!record_) throw std::logic_error("backward: tape was not recording");
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got " + shape_string(loss.shape()));

  GradientMap result;
  if (!loss.requires_grad()) return result;
  auto& grads = result.grads_;
  grads[loss.id()] = {1.0};

  auto slot = [&grads](const Tensor& t) -> std::vector<double>& {
    auto& g = grads[t.id()];
    if (g.empty()) g.assign(t.size(), 0.0);
    return g;
  };

  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    const auto& e = *it;
    auto found = grads.find(e.output.id());
    if (found == grads.end()) continue;
    std::vector<double> dy = std::move(found->second);
    grads.erase(found);
    const auto& in = e.inputs;

    switch (e.op) {
      case Op::MatMul: {
        ConstMap g(dy.data(), e.output.rows(), e.output.cols());
        auto a = as_matrix(in[0]);
        auto b = as_matrix(in[1]);
        if (in[0].requires_grad()) {
          auto& da = slot(in[0]);
          MutMap dam(da.data(), in[0].rows(), in[0].cols());
          if (!e.trans_a && !e.trans_b) dam.noalias() += g * b.transpose();
          else if (!e.trans_a && e.trans_b) dam.noalias() += g * b;
          else if (e.trans_a && !e.trans_b) dam.noalias() += b * g.transpose();
          else dam.noalias() += b.transpose() * g.transpose();
        }
        if (in[1].requires_grad()) {
          auto& db = slot(in[1]);
          MutMap dbm(db.data(), in[1].rows(), in[1].cols());
          if (!e.trans_a && !e.trans_b) dbm.noalias() += a.transpose() * g;
          else if (!e.trans_a && e.trans_b) dbm.noalias() += g.transpose() * a;
          else if (e.trans_a && !e.trans_b) dbm.noalias() += a * g;
          else dbm.noalias() += g.transpose() * a.transpose();
        }
        break;
      }
      case Op::Add: {
        if (in[0].requires_grad()) add_into(slot(in[0]), dy);
        if (in[1].requires_grad()) {
          auto& db = slot(in[1]);
          if (db.size() == dy.size()) {
            add_into(db, dy);
          } else {
            std::size_t c = db.size();
            for (std::size_t i = 0; i < dy.size(); ++i) db[i % c] += dy[i];
          }
        }
        break;
      }
      case Op::Mul: {
        auto a = in[0].values();
        auto b = in[1].values();
        if (in[0].requires_grad()) {
          auto& da = slot(in[0]);
          for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * b[i];
        }
        if (in[1].requires_grad()) {
          auto& db = slot(in[1]);
          for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * a[i];
        }
        break;
      }
      case Op::Concat: {
        std::size_t rows = e.output.rows(), width = e.output.cols(), offset = 0;
        for (const auto& part : in) {
          std::size_t c = part.cols();
          if (part.requires_grad()) {
            auto& dp = slot(part);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < c; ++j) dp[r * c + j] += dy[r * width + offset + j];
          }
          offset += c;
        }
        break;
      }
      case Op::StackRows: {
        std::size_t offset = 0;
        for (const auto& part : in) {
          if (part.requires_grad()) {
            auto& dp = slot(part);
            for (std::size_t i = 0; i < part.size(); ++i) dp[i] += dy[offset + i];
          }
          offset += part.size();
        }
        break;
      }
      case Op::Tanh: {
        auto yv = e.output.values();
        auto& dx = slot(in[0]);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (1.0 - yv[i] * yv[i]);
        break;
      }
      case Op::Sigmoid: {
        auto yv = e.output.values();
        auto& dx = slot(in[0]);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * yv[i] * (1.0 - yv[i]);
        break;
      }
      case Op::Softmax: {
        auto yv = e.output.values();
        auto& dx = slot(in[0]);
        std::size_t rows = e.output.rows(), cols = e.output.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += dy[r * cols + c] * yv[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c)
            dx[r * cols + c] += yv[r * cols + c] * (dy[r * cols + c] - dot);
        }
        break;
      }
      case Op::Embedding: {
        auto& dt = slot(in[0]);
        std::size_t d = in[0].cols();
        for (std::size_t i = 0; i < e.ids.size(); ++i) {
          double* row = dt.data() + static_cast<std::size_t>(e.ids[i]) * d;
          for (std::size_t j = 0; j < d; ++j) row[j] += dy[i * d + j];
        }
        break;
      }
      case Op::MaxPoolRows: {
        auto& dx = slot(in[0]);
        std::size_t cols = in[0].cols();
        for (std::size_t c = 0; c < cols; ++c) dx[e.argmax[c] * cols + c] += dy[c];
        break;
      }
      case Op::Dropout: {
        auto& dx = slot(in[0]);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * e.mask[i];
        break;
      }
      case Op::Scale: {
        auto& dx = slot(in[0]);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += e.factor * dy[i];
        break;
      }
      case Op::SliceRows: {
        auto& dx = slot(in[0]);
        std::size_t offset = e.begin * in[0].cols();
        for (std::size_t i = 0; i < dy.size(); ++i) dx[offset + i] += dy[i];
        break;
      }
      case Op::Sum: {
        auto& dx = slot(in[0]);
        for (auto& v : dx) v += dy[0];
        break;
      }
      case Op::Log: {
        auto x = in[0].values();
        auto& dx = slot(in[0]);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] / x[i];
        break;
      }
    }
  }

  // Whatever is left belongs to leaves; drop constants that never needed it.
  std::erase_if(grads, [](const auto& kv) { return !kv.first->requires_grad; });
  return result;
}

// ---------------------------------------------------------------------------
// Gradient check

double grad_check(const std::function<Tensor(Tape&)>& build_loss, std::span<Tensor> params,
                  double step) {
  if (!(step > 0.0 && step <= 1e-3)) throw std::invalid_argument("grad_check: step must be in (0, 1e-3]");

  Tape tape;
  Tensor loss = build_loss(tape);
  GradientMap grads = tape.backward(loss);
  double base = loss.item();

  auto evaluate = [&build_loss]() {
    Tape t(false);
    return build_loss(t).item();
  };
  if (std::bit_cast<std::uint64_t>(evaluate()) != std::bit_cast<std::uint64_t>(base))
    throw std::invalid_argument("grad_check: build_loss is not deterministic");

  double worst = 0.0;
  for (auto& p : params) {
    const auto* g = grads.find(p);
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      double saved = values[i];
      values[i] = saved + step;
      double plus = evaluate();
      values[i] = saved - step;
      double minus = evaluate();
      values[i] = saved;
      double fd = (plus - minus) / (2.0 * step);
      double ga = g ? (*g)[i] : 0.0;
      double err = std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

constexpr char kMagic[8] = {'U', 'Q', 'G', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(std::string_view bytes, const std::string& origin) : bytes_(bytes), origin_(origin) {}

  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    need(sizeof(U));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      bits |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw std::runtime_error(origin_ + ": truncated checkpoint at byte " + std::to_string(pos_));
  }

  std::string_view bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(std::span<const NamedTensor> tensors) {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.values()) put_le<double>(out, v);
  }
  return out;
}

std::vector<NamedTensor> deserialize_checkpoint(std::string_view bytes, const std::string& origin) {
  Reader in(bytes, origin);
  if (in.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic)))
    throw std::runtime_error(origin + ": not a checkpoint (bad magic)");
  auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw std::runtime_error(origin + ": checkpoint format version " + std::to_string(version) +
                             " but this build reads version " + std::to_string(kCheckpointVersion));
  auto count = in.get<std::uint32_t>();
  std::vector<NamedTensor> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    auto name_len = in.get<std::uint32_t>();
    std::string name(in.take(name_len));
    auto rank = in.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = in.get<std::uint64_t>();
    std::vector<double> values(product(shape));
    for (auto& v : values) v = in.get<double>();
    out.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values), true)});
  }
  if (!in.done()) throw std::runtime_error(origin + ": trailing bytes after checkpoint records");
  return out;
}

void save_checkpoint(const std::string& path, std::span<const NamedTensor> tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  auto bytes = serialize_checkpoint(tensors);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, path);
}

}  // namespace uqg
