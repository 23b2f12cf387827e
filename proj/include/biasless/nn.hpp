#pragma once

#include "biasless/search_space.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace biasless {

/// Dense row-major tensor.
template <class Scalar>
struct BasicTensor {
    std::vector<std::size_t> shape;
    std::vector<Scalar> data;

    BasicTensor() = default;
    explicit BasicTensor(std::vector<std::size_t> dims, Scalar fill = Scalar(0));
    BasicTensor(std::vector<std::size_t> dims, std::vector<Scalar> values);

    std::size_t size() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    Scalar& operator[](std::size_t i) { return data[i]; }
    Scalar operator[](std::size_t i) const { return data[i]; }
    /// Throws NumericError naming `where` on the first NaN/Inf.
    void check_finite(std::string_view where) const;

    friend bool operator==(const BasicTensor&, const BasicTensor&) = default;
};

using Tensor = BasicTensor<float>;

struct InputShape {
    int channels = 3;
    int height = 8;
    int width = 8;

    friend bool operator==(const InputShape&, const InputShape&) = default;
};

template <class Scalar>
struct ParamTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<Scalar> values;
};

/// Per-parameter-tensor gradients, aligned with ChildNetwork::parameters().
template <class Scalar>
using GradientSet = std::vector<std::vector<Scalar>>;

namespace detail {
template <class Scalar>
struct NetworkImpl;
}

/// A compiled child network: 3x3 stem conv + ReLU, the block chain, global
/// average pooling and a linear head. All convolutions are stride 1 with
/// "same" zero padding.
///
/// Block realizations (CH1 from the predecessor):
///   CB   conv(K, CH1->CH2) ReLU conv(K, CH2->CH3) ReLU
///   RB   CB body without its last ReLU, plus a shortcut (identity if
///        CH1 == CH3, else a 1x1 conv), then ReLU
///   MB   1x1(CH1->CH2) ReLU depthwise(K) ReLU 1x1(CH2->CH3), plus x if CH1 == CH3
///   DB   depthwise(K on CH1) ReLU 1x1(CH1->CH3)
///   SKIP identity
///
/// Not thread-safe: forward() populates a cache that backward() consumes.
template <class Scalar>
class BasicChildNetwork {
public:
    /// Throws CompileError if the encoding is invalid.
    static BasicChildNetwork compile(const ArchitectureEncoding& enc, InputShape input, std::uint64_t seed);

    BasicChildNetwork(const BasicChildNetwork& other);
    BasicChildNetwork& operator=(const BasicChildNetwork& other);
    BasicChildNetwork(BasicChildNetwork&&) noexcept;
    BasicChildNetwork& operator=(BasicChildNetwork&&) noexcept;
    ~BasicChildNetwork();

    /// `batch` has shape (N, C, H, W); returns logits (N, num_classes).
    BasicTensor<Scalar> forward(const BasicTensor<Scalar>& batch);
    /// Gradients of Σ loss_grad ⊙ logits for the batch of the last forward().
    /// Throws StateError if there is no fresh forward() to consume.
    GradientSet<Scalar> backward(const BasicTensor<Scalar>& loss_grad);
    /// θ ← θ − lr·g. Invalidates the activation cache.
    void sgd_step(const GradientSet<Scalar>& grads, double lr);

    std::vector<ParamTensor<Scalar>>& parameters();
    const std::vector<ParamTensor<Scalar>>& parameters() const;
    /// Marks the cache stale; call after editing parameters() in place.
    void invalidate_cache();
    std::size_t parameter_count() const;

    const ArchitectureEncoding& encoding() const;
    InputShape input_shape() const;

    /// Same architecture and parameters in another precision.
    template <class Other>
    BasicChildNetwork<Other> cast() const;

private:
    explicit BasicChildNetwork(std::unique_ptr<detail::NetworkImpl<Scalar>> impl);
    template <class>
    friend class BasicChildNetwork;

    std::unique_ptr<detail::NetworkImpl<Scalar>> impl_;
};

using ChildNetwork = BasicChildNetwork<float>;

/// Number of trainable scalars for `enc` fed with `input_channels` planes.
std::size_t parameter_count(const ArchitectureEncoding& enc, int input_channels);

/// Writes the encoding text form, the input shape and the raw parameters.
void save_snapshot(const ChildNetwork& net, const std::filesystem::path& path);
/// Throws IoError on malformed files and LookupError if the stored encoding
/// differs from `expected`.
ChildNetwork load_snapshot(const std::filesystem::path& path, const ArchitectureEncoding& expected);

}  // namespace biasless
