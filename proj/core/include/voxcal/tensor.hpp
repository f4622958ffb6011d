// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "voxcal/errors.hpp"

namespace voxcal {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense row-major f32 tensor. Copies share the underlying buffer (value
/// semantics over a shared payload), so a parameter and its copies stay in
/// sync through optimizer updates.
class Tensor {
public:
    // Autograd linkage, shared across copies of the same logical tensor.
    // `node` is only meaningful while `epoch` matches the active tape's epoch.
    struct GradMeta {
        int64_t node = -1;
        uint64_t epoch = 0;
    };

    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f, bool requires_grad = false);
    Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

    static Tensor scalar(float v);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0f); }
    static Tensor param(Shape shape, std::vector<float> data);

    const Shape& shape() const { return shape_; }
    int64_t dim() const { return int64_t(shape_.size()); }
    int64_t numel() const { return data_ ? int64_t(data_->size()) : 0; }
    bool defined() const { return data_ != nullptr; }

    std::span<const float> data() const { return {data_->data(), data_->size()}; }
    std::span<float> mutable_data() { return {data_->data(), data_->size()}; }
    const std::shared_ptr<std::vector<float>>& buffer() const { return data_; }

    float item() const;
    float at(int64_t flat_index) const { return (*data_)[size_t(flat_index)]; }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool v);

    /// Deep copy of the payload. The clone has its own buffer and fresh meta.
    Tensor clone() const;
    /// Same data, fresh buffer, requires_grad off. No tape linkage.
    Tensor detached() const;

    const std::shared_ptr<GradMeta>& meta() const { return meta_; }

private:
    Shape shape_;
    std::shared_ptr<std::vector<float>> data_;
    std::shared_ptr<GradMeta> meta_;
    bool requires_grad_ = false;
};

/// Gradient buffers produced by one backward pass, keyed by tape node id.
class GradMap {
public:
    using Store = std::unordered_map<int64_t, std::vector<float>>;

    bool has(const Tensor& t) const { return find(t) != nullptr; }
    /// Gradient buffer of `t`, or nullptr when t is not an ancestor of the loss.
    const std::vector<float>* find(const Tensor& t) const;
    /// Gradient buffer of `t`; throws InvalidArgument when absent.
    const std::vector<float>& at(const Tensor& t) const;
    /// Gradient of `t`, or zeros of its size when absent (non-ancestor).
    std::vector<float> get_or_zero(const Tensor& t) const;

    Store& store() { return store_; }
    const Store& store() const { return store_; }
    size_t size() const { return store_.size(); }

private:
    Store store_;
};

/// Reverse-mode tape. Records primitive applications in execution order;
/// backward() replays them once, in reverse. Single-threaded by contract.
class Tape {
public:
    // grad_out: gradient w.r.t. the record's output (flat, output-sized).
    // grad_in[i]: accumulation buffer for input i, already zero-initialised,
    // or nullptr when that input is untracked.
    using BackwardFn =
        std::function<void(const std::vector<float>& grad_out,
                           const std::vector<std::vector<float>*>& grad_in)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Assign a node id to a leaf (parameter/input) tensor. Idempotent within
    /// one epoch; re-registers after clear().
    int64_t register_leaf(const Tensor& t);

    /// Record one primitive application and return the output node id.
    int64_t record(const char* op, std::vector<int64_t> input_nodes,
                   int64_t out_numel, BackwardFn backward);

    /// Attach `t` to freshly-recorded node `node`.
    void bind(const Tensor& t, int64_t node) const;

    /// Reverse sweep from a scalar loss. The tape itself is left intact;
    /// call clear() to drop records.
    GradMap backward(const Tensor& loss) const;

    void clear();

    size_t num_records() const { return records_.size(); }
    size_t num_nodes() const { return numel_of_.size(); }
    uint64_t epoch() const { return epoch_; }

    /// True when `t` carries a node id valid for this tape right now.
    bool tracks(const Tensor& t) const;
    /// Node id of `t` on this tape, or -1.
    int64_t node_of(const Tensor& t) const;

    static Tape* active();

private:
    friend class TapeScope;

    struct Record {
        const char* op;
        std::vector<int64_t> inputs;
        int64_t output;
        BackwardFn backward;
    };

    std::vector<Record> records_;
    std::vector<int64_t> numel_of_; // indexed by node id
    uint64_t epoch_ = 1;
};

/// RAII scope making a tape the active recording target for this thread.
/// Pass nullptr to suspend recording (pure functional evaluation).
class TapeScope {
public:
    explicit TapeScope(Tape* tape);
    explicit TapeScope(Tape& tape) : TapeScope(&tape) {}
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

} // namespace voxcal
