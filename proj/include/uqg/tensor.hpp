#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace uqg {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

struct TensorData {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  // Leaves are created outside a tape (parameters, constants).
  bool leaf = true;
};

// Shared handle to dense row-major float64 storage. Copies alias the same
// storage, so a parameter tensor can be referenced from many tapes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  std::size_t size() const { return data_->values.size(); }
  // Rank-1 tensors are viewed as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return data_->values; }
  std::span<double> mutable_values() { return data_->values; }
  double item() const;
  double at(std::size_t row, std::size_t col) const { return data_->values[row * cols() + col]; }

  bool requires_grad() const { return data_->requires_grad; }
  bool is_leaf() const { return data_->leaf; }
  const TensorData* id() const { return data_.get(); }

  Tensor clone() const;

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<TensorData> data) : data_(std::move(data)) {}
  std::shared_ptr<TensorData> data_;
};

// Gradients keyed by parameter identity.
class GradientMap {
 public:
  bool contains(const Tensor& t) const { return grads_.count(t.id()) != 0; }
  const std::vector<double>* find(const Tensor& t) const;
  std::vector<double>& slot(const Tensor& t);
  std::size_t size() const { return grads_.size(); }

  // Coordinatewise sum; entries absent on one side are taken as zero.
  void accumulate(const GradientMap& other);
  void scale(double factor);
  bool all_finite() const;
  double squared_norm() const;

  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  friend class Tape;
  std::unordered_map<const TensorData*, std::vector<double>> grads_;
};

enum class Op {
  MatMul,
  Add,
  Mul,
  Concat,
  StackRows,
  Tanh,
  Sigmoid,
  Softmax,
  Embedding,
  MaxPoolRows,
  Dropout,
  Scale,
  SliceRows,
  Sum,
  Log,
};

const char* op_name(Op op);

struct TapeEntry {
  Op op;
  std::vector<Tensor> inputs;
  Tensor output;
  double factor = 1.0;  // Scale factor, or keep probability for Dropout.
  std::uint64_t seed = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  bool trans_a = false;
  bool trans_b = false;
  std::vector<int> ids;
  std::vector<std::size_t> argmax;
  std::vector<double> mask;
};

// Records primitive applications in execution order. A tape built with
// record=false only evaluates (inference); backward() then rejects.
//
// Every primitive rejects non-finite inputs and shape mismatches with
// std::invalid_argument naming the primitive.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool recording() const { return record_; }

  Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
  // Same shape, or b a single row broadcast over the rows of a, or b a scalar.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor concat(std::span<const Tensor> parts);
  Tensor concat(std::initializer_list<Tensor> parts);
  Tensor stack_rows(std::span<const Tensor> rows);
  Tensor tanh(const Tensor& x);
  Tensor sigmoid(const Tensor& x);
  Tensor softmax(const Tensor& x);
  Tensor embedding(const Tensor& table, std::span<const int> ids);
  Tensor max_pool_rows(const Tensor& x);
  // Inverted dropout: kept entries are scaled by 1/keep. keep == 1 is identity.
  Tensor dropout(const Tensor& x, double keep, std::uint64_t seed);
  Tensor scale(const Tensor& x, double factor);
  Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
  Tensor sum(const Tensor& x);
  Tensor log(const Tensor& x);

  GradientMap backward(const Tensor& loss) const;

  // Recomputes every recorded entry from its (possibly modified) inputs.
  void replay();

  std::span<const TapeEntry> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  Tensor push(TapeEntry entry, Shape out_shape);
  void check_inputs(const TapeEntry& entry);

  bool record_;
  std::vector<TapeEntry> entries_;
  std::unordered_set<const TensorData*> checked_leaves_;
};

// Max over all coordinates of |g_auto - g_fd| / max(1e-8, |g_auto| + |g_fd|),
// with central differences of the given step. build_loss must be
// deterministic; two evaluations at the same point that differ are rejected.
double grad_check(const std::function<Tensor(Tape&)>& build_loss, std::span<Tensor> params,
                  double step = 1e-5);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary checkpoint: magic "UQGCKPT\0", u32 version, u32 count, then per
// record u32 name length, name bytes, u32 rank, u64 dims, f64 values.
// All integers and floats little-endian.
void save_checkpoint(const std::string& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);
std::string serialize_checkpoint(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> deserialize_checkpoint(std::string_view bytes, const std::string& origin);

}  // namespace uqg
