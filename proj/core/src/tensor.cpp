// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#include "voxcal/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace voxcal {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape shape, float fill, bool requires_grad)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<float>>(size_t(shape_numel(shape_)), fill)),
      meta_(std::make_shared<GradMeta>()),
      requires_grad_(requires_grad) {
    for (int64_t e : shape_) {
        if (e <= 0) throw InvalidArgument("tensor extents must be positive, got " + shape_str(shape_));
    }
}

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<float>>(std::move(data))),
      meta_(std::make_shared<GradMeta>()),
      requires_grad_(requires_grad) {
    if (shape_numel(shape_) != int64_t(data_->size())) {
        throw InvalidArgument("shape " + shape_str(shape_) + " does not match buffer of " +
                              std::to_string(data_->size()) + " elements");
    }
}

Tensor Tensor::scalar(float v) { return Tensor(Shape{1}, std::vector<float>{v}); }

Tensor Tensor::param(Shape shape, std::vector<float> data) {
    return Tensor(std::move(shape), std::move(data), /*requires_grad=*/true);
}

float Tensor::item() const {
    if (numel() != 1) throw InvalidArgument("item() requires a scalar, got shape " + shape_str(shape_));
    return (*data_)[0];
}

void Tensor::set_requires_grad(bool v) { requires_grad_ = v; }

Tensor Tensor::clone() const {
    if (!defined()) return Tensor();
    Tensor out(shape_, std::vector<float>(data_->begin(), data_->end()), requires_grad_);
    return out;
}

Tensor Tensor::detached() const {
    Tensor out = clone();
    out.set_requires_grad(false);
    return out;
}

// ---------------------------------------------------------------------------
// GradMap
// ---------------------------------------------------------------------------

const std::vector<float>* GradMap::find(const Tensor& t) const {
    if (!t.meta() || t.meta()->node < 0) return nullptr;
    auto it = store_.find(t.meta()->node);
    return it == store_.end() ? nullptr : &it->second;
}

const std::vector<float>& GradMap::at(const Tensor& t) const {
    const auto* g = find(t);
    if (!g) throw InvalidArgument("no gradient recorded for tensor (node not an ancestor of the loss)");
    return *g;
}

std::vector<float> GradMap::get_or_zero(const Tensor& t) const {
    const auto* g = find(t);
    if (g) return *g;
    return std::vector<float>(size_t(t.numel()), 0.0f);
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape* tape) : previous_(g_active_tape) { g_active_tape = tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

bool Tape::tracks(const Tensor& t) const {
    return t.meta() && t.meta()->epoch == epoch_ && t.meta()->node >= 0;
}

int64_t Tape::node_of(const Tensor& t) const { return tracks(t) ? t.meta()->node : -1; }

int64_t Tape::register_leaf(const Tensor& t) {
    if (tracks(t)) return t.meta()->node;
    const int64_t id = int64_t(numel_of_.size());
    numel_of_.push_back(t.numel());
    t.meta()->node = id;
    t.meta()->epoch = epoch_;
    return id;
}

int64_t Tape::record(const char* op, std::vector<int64_t> input_nodes, int64_t out_numel,
                     BackwardFn backward) {
    const int64_t id = int64_t(numel_of_.size());
    numel_of_.push_back(out_numel);
    records_.push_back(Record{op, std::move(input_nodes), id, std::move(backward)});
    return id;
}

void Tape::bind(const Tensor& t, int64_t node) const {
    t.meta()->node = node;
    t.meta()->epoch = epoch_;
}

GradMap Tape::backward(const Tensor& loss) const {
    if (loss.numel() != 1) {
        throw InvalidArgument("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!tracks(loss)) {
        throw InvalidArgument("backward() loss is not on this tape");
    }

    std::vector<std::unique_ptr<std::vector<float>>> grads(numel_of_.size());
    const int64_t loss_node = loss.meta()->node;
    grads[size_t(loss_node)] = std::make_unique<std::vector<float>>(1, 1.0f);

    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        const Record& rec = *it;
        auto& gout = grads[size_t(rec.output)];
        if (!gout) continue; // output not an ancestor of the loss

        std::vector<std::vector<float>*> gin(rec.inputs.size(), nullptr);
        for (size_t i = 0; i < rec.inputs.size(); ++i) {
            const int64_t in = rec.inputs[i];
            if (in < 0) continue;
            auto& slot = grads[size_t(in)];
            if (!slot) {
                slot = std::make_unique<std::vector<float>>(size_t(numel_of_[size_t(in)]), 0.0f);
            }
            gin[i] = slot.get();
        }
        rec.backward(*gout, gin);
    }

    GradMap out;
    for (size_t id = 0; id < grads.size(); ++id) {
        if (grads[id]) out.store().emplace(int64_t(id), std::move(*grads[id]));
    }
    return out;
}

void Tape::clear() {
    records_.clear();
    numel_of_.clear();
    ++epoch_;
}

} // namespace voxcal
