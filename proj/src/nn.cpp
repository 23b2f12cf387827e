#include "biasless/nn.hpp"

#include "biasless/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>

namespace biasless {

// ---------------------------------------------------------------------------
// Tensor

template <class Scalar>
BasicTensor<Scalar>::BasicTensor(std::vector<std::size_t> dims, Scalar fill) : shape(std::move(dims)) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    data.assign(n, fill);
}

template <class Scalar>
BasicTensor<Scalar>::BasicTensor(std::vector<std::size_t> dims, std::vector<Scalar> values)
    : shape(std::move(dims)), data(std::move(values)) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    if (n != data.size())
        throw NumericError("tensor data length " + std::to_string(data.size()) + " does not match shape volume " +
                           std::to_string(n));
}

template <class Scalar>
void BasicTensor<Scalar>::check_finite(std::string_view where) const {
    for (std::size_t i = 0; i < data.size(); ++i)
        if (!std::isfinite(data[i]))
            throw NumericError("non-finite value at index " + std::to_string(i) + " in " + std::string(where));
}

template struct BasicTensor<float>;
template struct BasicTensor<double>;

namespace detail {

enum class OpKind : std::uint8_t { Conv, Relu, Add, Pool, Linear };

struct ConvDef {
    int in = 0;
    int out = 0;
    int kernel = 1;
    bool depthwise = false;
    std::size_t weight = 0;  // parameter tensor indices
    std::size_t bias = 0;
};

struct Op {
    OpKind kind;
    int src = 0;
    int src2 = -1;  // second operand of Add
    int dst = 0;
    int conv = -1;  // ConvDef index, or the head for Linear
};

struct BufferInfo {
    int channels = 0;
    bool spatial = true;  // [c][n][hw] if spatial, [n][c] otherwise
};

template <class S>
struct NetworkImpl {
    ArchitectureEncoding enc;
    InputShape input;
    std::vector<ParamTensor<S>> params;
    std::vector<ConvDef> convs;
    std::size_t head_weight = 0;
    std::size_t head_bias = 0;
    std::vector<Op> ops;
    std::vector<BufferInfo> buffers;

    // Activation cache.
    int batch = 0;
    bool fresh = false;
    std::vector<std::vector<S>> values;
    std::vector<std::vector<S>> cols;  // per ConvDef im2col buffer

    int hw() const { return input.height * input.width; }
    std::size_t buffer_size(int b) const {
        return static_cast<std::size_t>(buffers[static_cast<std::size_t>(b)].channels) *
               static_cast<std::size_t>(batch) *
               (buffers[static_cast<std::size_t>(b)].spatial ? static_cast<std::size_t>(hw()) : 1u);
    }
};

// --- kernels ----------------------------------------------------------------
//
// Spatial activations use the [channel][sample][row][col] layout so that a
// convolution over a whole batch is a single GEMM against the im2col matrix.

template <class S>
void im2col(const S* x, int in, int k, int n, int h, int w, S* col) {
    const int pad = k / 2;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t p_total = plane * static_cast<std::size_t>(n);
    std::fill(col, col + static_cast<std::size_t>(in) * k * k * p_total, S(0));
    for (int ci = 0; ci < in; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const int oy = ky - pad;
                const int ox = kx - pad;
                S* dst = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * p_total;
                const S* src = x + static_cast<std::size_t>(ci) * p_total;
                const int w0 = std::max(0, -ox);
                const int w1 = std::min(w, w - ox);
                for (int b = 0; b < n; ++b)
                    for (int r = std::max(0, -oy); r < std::min(h, h - oy); ++r) {
                        const std::size_t drow = b * plane + static_cast<std::size_t>(r) * w;
                        const std::size_t srow = b * plane + static_cast<std::size_t>(r + oy) * w;
                        for (int c = w0; c < w1; ++c) dst[drow + c] = src[srow + c + ox];
                    }
            }
}

template <class S>
void col2im_add(const S* col, int in, int k, int n, int h, int w, S* dx) {
    const int pad = k / 2;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t p_total = plane * static_cast<std::size_t>(n);
    for (int ci = 0; ci < in; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const int oy = ky - pad;
                const int ox = kx - pad;
                const S* src = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * p_total;
                S* dst = dx + static_cast<std::size_t>(ci) * p_total;
                const int w0 = std::max(0, -ox);
                const int w1 = std::min(w, w - ox);
                for (int b = 0; b < n; ++b)
                    for (int r = std::max(0, -oy); r < std::min(h, h - oy); ++r) {
                        const std::size_t crow = b * plane + static_cast<std::size_t>(r) * w;
                        const std::size_t xrow = b * plane + static_cast<std::size_t>(r + oy) * w;
                        for (int c = w0; c < w1; ++c) dst[xrow + c + ox] += src[crow + c];
                    }
            }
}

// y[co][p] = bias[co] + Σ_r W[co][r] · col[r][p]
template <class S>
void gemm_forward(const S* __restrict weight, const S* __restrict bias, const S* __restrict col, int out, int rows,
                  std::size_t p_total, S* __restrict y) {
    for (int co = 0; co < out; ++co) {
        S* __restrict yrow = y + static_cast<std::size_t>(co) * p_total;
        std::fill(yrow, yrow + p_total, bias[co]);
        for (int r = 0; r < rows; ++r) {
            const S wv = weight[static_cast<std::size_t>(co) * rows + r];
            const S* __restrict crow = col + static_cast<std::size_t>(r) * p_total;
            for (std::size_t p = 0; p < p_total; ++p) yrow[p] += wv * crow[p];
        }
    }
}

template <class S>
S dot(const S* __restrict a, const S* __restrict b, std::size_t n) {
    S acc[4] = {S(0), S(0), S(0), S(0)};
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) acc[0] += a[i] * b[i];
    return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

template <class S>
void gemm_backward(const S* __restrict weight, const S* __restrict col, const S* __restrict dy, int out, int rows,
                   std::size_t p_total, S* __restrict dweight, S* __restrict dbias, S* __restrict dcol) {
    for (int co = 0; co < out; ++co) {
        const S* __restrict dyrow = dy + static_cast<std::size_t>(co) * p_total;
        S bsum = S(0);
        for (std::size_t p = 0; p < p_total; ++p) bsum += dyrow[p];
        dbias[co] += bsum;
        for (int r = 0; r < rows; ++r)
            dweight[static_cast<std::size_t>(co) * rows + r] += dot(dyrow, col + static_cast<std::size_t>(r) * p_total, p_total);
    }
    if (!dcol) return;
    std::fill(dcol, dcol + static_cast<std::size_t>(rows) * p_total, S(0));
    for (int co = 0; co < out; ++co) {
        const S* __restrict dyrow = dy + static_cast<std::size_t>(co) * p_total;
        for (int r = 0; r < rows; ++r) {
            const S wv = weight[static_cast<std::size_t>(co) * rows + r];
            S* __restrict drow = dcol + static_cast<std::size_t>(r) * p_total;
            for (std::size_t p = 0; p < p_total; ++p) drow[p] += wv * dyrow[p];
        }
    }
}

template <class S>
void depthwise_forward(const S* x, const S* weight, const S* bias, int channels, int k, int n, int h, int w, S* y) {
    const int pad = k / 2;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t p_total = plane * static_cast<std::size_t>(n);
    for (int c = 0; c < channels; ++c) {
        S* yc = y + static_cast<std::size_t>(c) * p_total;
        const S* xc = x + static_cast<std::size_t>(c) * p_total;
        std::fill(yc, yc + p_total, bias[c]);
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const S wv = weight[(static_cast<std::size_t>(c) * k + ky) * k + kx];
                const int oy = ky - pad;
                const int ox = kx - pad;
                const int w0 = std::max(0, -ox);
                const int w1 = std::min(w, w - ox);
                for (int b = 0; b < n; ++b)
                    for (int r = std::max(0, -oy); r < std::min(h, h - oy); ++r) {
                        S* yrow = yc + b * plane + static_cast<std::size_t>(r) * w;
                        const S* xrow = xc + b * plane + static_cast<std::size_t>(r + oy) * w + ox;
                        for (int cc = w0; cc < w1; ++cc) yrow[cc] += wv * xrow[cc];
                    }
            }
    }
}

template <class S>
void depthwise_backward(const S* x, const S* weight, const S* dy, int channels, int k, int n, int h, int w,
                        S* dweight, S* dbias, S* dx) {
    const int pad = k / 2;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t p_total = plane * static_cast<std::size_t>(n);
    for (int c = 0; c < channels; ++c) {
        const S* dyc = dy + static_cast<std::size_t>(c) * p_total;
        const S* xc = x + static_cast<std::size_t>(c) * p_total;
        S* dxc = dx ? dx + static_cast<std::size_t>(c) * p_total : nullptr;
        S bsum = S(0);
        for (std::size_t p = 0; p < p_total; ++p) bsum += dyc[p];
        dbias[c] += bsum;
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const std::size_t widx = (static_cast<std::size_t>(c) * k + ky) * k + kx;
                const S wv = weight[widx];
                const int oy = ky - pad;
                const int ox = kx - pad;
                const int w0 = std::max(0, -ox);
                const int w1 = std::min(w, w - ox);
                S acc = S(0);
                for (int b = 0; b < n; ++b)
                    for (int r = std::max(0, -oy); r < std::min(h, h - oy); ++r) {
                        const S* dyrow = dyc + b * plane + static_cast<std::size_t>(r) * w;
                        const std::size_t xoff = b * plane + static_cast<std::size_t>(r + oy) * w + ox;
                        for (int cc = w0; cc < w1; ++cc) acc += dyrow[cc] * xc[xoff + cc];
                        if (dxc)
                            for (int cc = w0; cc < w1; ++cc) dxc[xoff + cc] += wv * dyrow[cc];
                    }
                dweight[widx] += acc;
            }
    }
}

// --- compile ----------------------------------------------------------------

template <class S>
class Builder {
public:
    Builder(NetworkImpl<S>& net, std::uint64_t seed) : net_(net), rng_(seed) {}

    int input(int channels) { return add_buffer(channels, true); }

    int conv(int src, int out, int kernel, std::string name) {
        const int in = net_.buffers[static_cast<std::size_t>(src)].channels;
        ConvDef def{in, out, kernel, false, 0, 0};
        const std::size_t fan_in = static_cast<std::size_t>(in) * kernel * kernel;
        def.weight = add_param(name + ".weight",
                               {static_cast<std::size_t>(out), static_cast<std::size_t>(in),
                                static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)},
                               std::sqrt(6.0 / static_cast<double>(fan_in)));
        def.bias = add_param(name + ".bias", {static_cast<std::size_t>(out)}, 0.0);
        return push_conv(src, def, out);
    }

    int depthwise(int src, int kernel, std::string name) {
        const int ch = net_.buffers[static_cast<std::size_t>(src)].channels;
        ConvDef def{ch, ch, kernel, true, 0, 0};
        def.weight = add_param(name + ".weight",
                               {static_cast<std::size_t>(ch), 1u, static_cast<std::size_t>(kernel),
                                static_cast<std::size_t>(kernel)},
                               std::sqrt(6.0 / static_cast<double>(kernel * kernel)));
        def.bias = add_param(name + ".bias", {static_cast<std::size_t>(ch)}, 0.0);
        return push_conv(src, def, ch);
    }

    int relu(int src) {
        const int dst = add_buffer(net_.buffers[static_cast<std::size_t>(src)].channels, true);
        net_.ops.push_back({OpKind::Relu, src, -1, dst, -1});
        return dst;
    }

    int add(int a, int b) {
        if (net_.buffers[static_cast<std::size_t>(a)].channels != net_.buffers[static_cast<std::size_t>(b)].channels)
            throw CompileError("residual add with mismatched channel counts");
        const int dst = add_buffer(net_.buffers[static_cast<std::size_t>(a)].channels, true);
        net_.ops.push_back({OpKind::Add, a, b, dst, -1});
        return dst;
    }

    int pool(int src) {
        const int dst = add_buffer(net_.buffers[static_cast<std::size_t>(src)].channels, false);
        net_.ops.push_back({OpKind::Pool, src, -1, dst, -1});
        return dst;
    }

    int linear(int src, int out) {
        const int in = net_.buffers[static_cast<std::size_t>(src)].channels;
        net_.head_weight = add_param("head.weight", {static_cast<std::size_t>(out), static_cast<std::size_t>(in)},
                                     std::sqrt(1.0 / static_cast<double>(in)));
        net_.head_bias = add_param("head.bias", {static_cast<std::size_t>(out)}, 0.0);
        const int dst = add_buffer(out, false);
        net_.ops.push_back({OpKind::Linear, src, -1, dst, -1});
        return dst;
    }

    int channels(int buffer) const { return net_.buffers[static_cast<std::size_t>(buffer)].channels; }

private:
    int add_buffer(int channels, bool spatial) {
        net_.buffers.push_back({channels, spatial});
        return static_cast<int>(net_.buffers.size()) - 1;
    }

    std::size_t add_param(std::string name, std::vector<std::size_t> shape, double bound) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        ParamTensor<S> p{std::move(name), std::move(shape), std::vector<S>(n, S(0))};
        if (bound > 0.0) {
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (auto& v : p.values) v = static_cast<S>(dist(rng_));
        }
        net_.params.push_back(std::move(p));
        return net_.params.size() - 1;
    }

    int push_conv(int src, const ConvDef& def, int out) {
        net_.convs.push_back(def);
        const int dst = add_buffer(out, true);
        net_.ops.push_back({OpKind::Conv, src, -1, dst, static_cast<int>(net_.convs.size()) - 1});
        return dst;
    }

    NetworkImpl<S>& net_;
    std::mt19937_64 rng_;
};

template <class S>
void build(NetworkImpl<S>& net, std::uint64_t seed) {
    Builder<S> b(net, seed);
    int cur = b.input(net.input.channels);
    cur = b.relu(b.conv(cur, net.enc.stem_channels, 3, "stem"));
    for (std::size_t i = 0; i < net.enc.blocks.size(); ++i) {
        const BlockChoice& blk = net.enc.blocks[i];
        const std::string name = "block" + std::to_string(i);
        const int ch1 = b.channels(cur);
        switch (blk.type) {
        case BlockType::SKIP:
            break;
        case BlockType::CB: {
            const int a = b.relu(b.conv(cur, blk.ch2, blk.kernel, name + ".conv1"));
            cur = b.relu(b.conv(a, blk.ch3, blk.kernel, name + ".conv2"));
            break;
        }
        case BlockType::RB: {
            const int a = b.relu(b.conv(cur, blk.ch2, blk.kernel, name + ".conv1"));
            const int body = b.conv(a, blk.ch3, blk.kernel, name + ".conv2");
            const int shortcut = ch1 == blk.ch3 ? cur : b.conv(cur, blk.ch3, 1, name + ".shortcut");
            cur = b.relu(b.add(body, shortcut));
            break;
        }
        case BlockType::MB: {
            const int a = b.relu(b.conv(cur, blk.ch2, 1, name + ".expand"));
            const int d = b.relu(b.depthwise(a, blk.kernel, name + ".depthwise"));
            const int proj = b.conv(d, blk.ch3, 1, name + ".project");
            cur = ch1 == blk.ch3 ? b.add(proj, cur) : proj;
            break;
        }
        case BlockType::DB: {
            const int d = b.relu(b.depthwise(cur, blk.kernel, name + ".depthwise"));
            cur = b.conv(d, blk.ch3, 1, name + ".pointwise");
            break;
        }
        }
        if (b.channels(cur) != (blk.is_skip() ? ch1 : blk.ch3))
            throw CompileError("channel chain broken at block " + std::to_string(i));
    }
    b.linear(b.pool(cur), net.enc.num_classes);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// BasicChildNetwork

template <class S>
BasicChildNetwork<S>::BasicChildNetwork(std::unique_ptr<detail::NetworkImpl<S>> impl) : impl_(std::move(impl)) {}

template <class S>
BasicChildNetwork<S>::BasicChildNetwork(const BasicChildNetwork& other)
    : impl_(std::make_unique<detail::NetworkImpl<S>>(*other.impl_)) {}

template <class S>
BasicChildNetwork<S>& BasicChildNetwork<S>::operator=(const BasicChildNetwork& other) {
    if (this != &other) impl_ = std::make_unique<detail::NetworkImpl<S>>(*other.impl_);
    return *this;
}

template <class S>
BasicChildNetwork<S>::BasicChildNetwork(BasicChildNetwork&&) noexcept = default;
template <class S>
BasicChildNetwork<S>& BasicChildNetwork<S>::operator=(BasicChildNetwork&&) noexcept = default;
template <class S>
BasicChildNetwork<S>::~BasicChildNetwork() = default;

template <class S>
BasicChildNetwork<S> BasicChildNetwork<S>::compile(const ArchitectureEncoding& enc, InputShape input,
                                                    std::uint64_t seed) {
    try {
        enc.validate();
    } catch (const SchemaError& e) {
        throw CompileError(std::string("cannot compile encoding: ") + e.what());
    }
    if (input.channels <= 0 || input.height <= 0 || input.width <= 0)
        throw CompileError("input shape must be positive");
    auto impl = std::make_unique<detail::NetworkImpl<S>>();
    impl->enc = enc;
    for (auto& b : impl->enc.blocks) b = b.normalized();
    impl->input = input;
    detail::build(*impl, seed);
    return BasicChildNetwork(std::move(impl));
}

template <class S>
BasicTensor<S> BasicChildNetwork<S>::forward(const BasicTensor<S>& batch) {
    using namespace detail;
    auto& net = *impl_;
    const auto& in = net.input;
    if (batch.shape.size() != 4 || batch.shape[1] != static_cast<std::size_t>(in.channels) ||
        batch.shape[2] != static_cast<std::size_t>(in.height) || batch.shape[3] != static_cast<std::size_t>(in.width) ||
        batch.shape[0] == 0)
        throw NumericError("forward: batch shape does not match the network input");

    const int n = static_cast<int>(batch.shape[0]);
    const int h = in.height;
    const int w = in.width;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t p_total = plane * static_cast<std::size_t>(n);
    net.batch = n;
    net.fresh = false;
    net.values.resize(net.buffers.size());
    net.cols.resize(net.convs.size());
    for (std::size_t b = 0; b < net.buffers.size(); ++b) net.values[b].resize(net.buffer_size(static_cast<int>(b)));

    // NCHW -> CNHW
    auto& x0 = net.values[0];
    for (int s = 0; s < n; ++s)
        for (int c = 0; c < in.channels; ++c)
            std::memcpy(&x0[(static_cast<std::size_t>(c) * n + s) * plane],
                        &batch.data[(static_cast<std::size_t>(s) * in.channels + c) * plane], plane * sizeof(S));

    for (const auto& op : net.ops) {
        const auto& src = net.values[static_cast<std::size_t>(op.src)];
        auto& dst = net.values[static_cast<std::size_t>(op.dst)];
        switch (op.kind) {
        case OpKind::Conv: {
            const auto& def = net.convs[static_cast<std::size_t>(op.conv)];
            const S* weight = net.params[def.weight].values.data();
            const S* bias = net.params[def.bias].values.data();
            if (def.depthwise) {
                depthwise_forward(src.data(), weight, bias, def.in, def.kernel, n, h, w, dst.data());
            } else if (def.kernel == 1) {
                gemm_forward(weight, bias, src.data(), def.out, def.in, p_total, dst.data());
            } else {
                auto& col = net.cols[static_cast<std::size_t>(op.conv)];
                const int rows = def.in * def.kernel * def.kernel;
                col.resize(static_cast<std::size_t>(rows) * p_total);
                im2col(src.data(), def.in, def.kernel, n, h, w, col.data());
                gemm_forward(weight, bias, col.data(), def.out, rows, p_total, dst.data());
            }
            break;
        }
        case OpKind::Relu:
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i] > S(0) ? src[i] : S(0);
            break;
        case OpKind::Add: {
            const auto& other = net.values[static_cast<std::size_t>(op.src2)];
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i] + other[i];
            break;
        }
        case OpKind::Pool: {
            const int channels = net.buffers[static_cast<std::size_t>(op.src)].channels;
            const S inv = S(1) / static_cast<S>(plane);
            for (int c = 0; c < channels; ++c)
                for (int s = 0; s < n; ++s) {
                    const S* row = &src[(static_cast<std::size_t>(c) * n + s) * plane];
                    S acc = S(0);
                    for (std::size_t p = 0; p < plane; ++p) acc += row[p];
                    dst[static_cast<std::size_t>(s) * channels + c] = acc * inv;
                }
            break;
        }
        case OpKind::Linear: {
            const int fin = net.buffers[static_cast<std::size_t>(op.src)].channels;
            const int fout = net.buffers[static_cast<std::size_t>(op.dst)].channels;
            const S* weight = net.params[net.head_weight].values.data();
            const S* bias = net.params[net.head_bias].values.data();
            for (int s = 0; s < n; ++s)
                for (int j = 0; j < fout; ++j) {
                    S acc = bias[j];
                    for (int c = 0; c < fin; ++c)
                        acc += weight[static_cast<std::size_t>(j) * fin + c] * src[static_cast<std::size_t>(s) * fin + c];
                    dst[static_cast<std::size_t>(s) * fout + j] = acc;
                }
            break;
        }
        }
    }

    BasicTensor<S> logits({static_cast<std::size_t>(n), static_cast<std::size_t>(net.enc.num_classes)},
                          net.values.back());
    logits.check_finite("forward logits");
    net.fresh = true;
    return logits;
}

template <class S>
GradientSet<S> BasicChildNetwork<S>::backward(const BasicTensor<S>& loss_grad) {
    using namespace detail;
    auto& net = *impl_;
    if (!net.fresh) throw StateError("backward() called without a fresh forward()");
    const int n = net.batch;
    if (loss_grad.shape != std::vector<std::size_t>{static_cast<std::size_t>(n), static_cast<std::size_t>(net.enc.num_classes)})
        throw StateError("backward(): loss gradient shape does not match the cached batch");
    net.fresh = false;

    const int h = net.input.height;
    const int w = net.input.width;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t p_total = plane * static_cast<std::size_t>(n);

    GradientSet<S> grads(net.params.size());
    for (std::size_t i = 0; i < net.params.size(); ++i) grads[i].assign(net.params[i].values.size(), S(0));

    std::vector<std::vector<S>> dv(net.buffers.size());
    for (std::size_t b = 1; b < net.buffers.size(); ++b) dv[b].assign(net.values[b].size(), S(0));
    dv.back() = loss_grad.data;
    std::vector<S> scratch;

    for (auto it = net.ops.rbegin(); it != net.ops.rend(); ++it) {
        const Op& op = *it;
        const auto& src = net.values[static_cast<std::size_t>(op.src)];
        const auto& dy = dv[static_cast<std::size_t>(op.dst)];
        const bool need_dx = op.src != 0;
        auto& dx = dv[static_cast<std::size_t>(op.src)];
        switch (op.kind) {
        case OpKind::Conv: {
            const auto& def = net.convs[static_cast<std::size_t>(op.conv)];
            const S* weight = net.params[def.weight].values.data();
            S* dweight = grads[def.weight].data();
            S* dbias = grads[def.bias].data();
            if (def.depthwise) {
                depthwise_backward(src.data(), weight, dy.data(), def.in, def.kernel, n, h, w, dweight, dbias,
                                   need_dx ? dx.data() : nullptr);
            } else if (def.kernel == 1) {
                if (need_dx) scratch.resize(static_cast<std::size_t>(def.in) * p_total);
                gemm_backward(weight, src.data(), dy.data(), def.out, def.in, p_total, dweight, dbias,
                              need_dx ? scratch.data() : nullptr);
                if (need_dx)
                    for (std::size_t i = 0; i < scratch.size(); ++i) dx[i] += scratch[i];
            } else {
                const int rows = def.in * def.kernel * def.kernel;
                const auto& col = net.cols[static_cast<std::size_t>(op.conv)];
                if (need_dx) scratch.resize(static_cast<std::size_t>(rows) * p_total);
                gemm_backward(weight, col.data(), dy.data(), def.out, rows, p_total, dweight, dbias,
                              need_dx ? scratch.data() : nullptr);
                if (need_dx) col2im_add(scratch.data(), def.in, def.kernel, n, h, w, dx.data());
            }
            break;
        }
        case OpKind::Relu: {
            const auto& y = net.values[static_cast<std::size_t>(op.dst)];
            for (std::size_t i = 0; i < dy.size(); ++i)
                if (y[i] > S(0)) dx[i] += dy[i];
            break;
        }
        case OpKind::Add: {
            auto& dx2 = dv[static_cast<std::size_t>(op.src2)];
            for (std::size_t i = 0; i < dy.size(); ++i) {
                dx[i] += dy[i];
                dx2[i] += dy[i];
            }
            break;
        }
        case OpKind::Pool: {
            const int channels = net.buffers[static_cast<std::size_t>(op.src)].channels;
            const S inv = S(1) / static_cast<S>(plane);
            for (int c = 0; c < channels; ++c)
                for (int s = 0; s < n; ++s) {
                    const S g = dy[static_cast<std::size_t>(s) * channels + c] * inv;
                    S* row = &dx[(static_cast<std::size_t>(c) * n + s) * plane];
                    for (std::size_t p = 0; p < plane; ++p) row[p] += g;
                }
            break;
        }
        case OpKind::Linear: {
            const int fin = net.buffers[static_cast<std::size_t>(op.src)].channels;
            const int fout = net.buffers[static_cast<std::size_t>(op.dst)].channels;
            const S* weight = net.params[net.head_weight].values.data();
            S* dweight = grads[net.head_weight].data();
            S* dbias = grads[net.head_bias].data();
            for (int s = 0; s < n; ++s)
                for (int j = 0; j < fout; ++j) {
                    const S g = dy[static_cast<std::size_t>(s) * fout + j];
                    dbias[j] += g;
                    for (int c = 0; c < fin; ++c) {
                        dweight[static_cast<std::size_t>(j) * fin + c] += g * src[static_cast<std::size_t>(s) * fin + c];
                        dx[static_cast<std::size_t>(s) * fin + c] += g * weight[static_cast<std::size_t>(j) * fin + c];
                    }
                }
            break;
        }
        }
    }

    for (std::size_t i = 0; i < grads.size(); ++i)
        for (S g : grads[i])
            if (!std::isfinite(g)) throw NumericError("non-finite gradient for " + net.params[i].name);
    return grads;
}

template <class S>
void BasicChildNetwork<S>::sgd_step(const GradientSet<S>& grads, double lr) {
    auto& params = impl_->params;
    if (grads.size() != params.size()) throw StateError("sgd_step: gradient set does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (grads[i].size() != params[i].values.size())
            throw StateError("sgd_step: gradient shape mismatch for " + params[i].name);
    const S step = static_cast<S>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& v = params[i].values;
        const auto& g = grads[i];
        for (std::size_t j = 0; j < v.size(); ++j) v[j] -= step * g[j];
    }
    impl_->fresh = false;
}

template <class S>
std::vector<ParamTensor<S>>& BasicChildNetwork<S>::parameters() {
    return impl_->params;
}
template <class S>
const std::vector<ParamTensor<S>>& BasicChildNetwork<S>::parameters() const {
    return impl_->params;
}
template <class S>
void BasicChildNetwork<S>::invalidate_cache() {
    impl_->fresh = false;
}
template <class S>
std::size_t BasicChildNetwork<S>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : impl_->params) n += p.values.size();
    return n;
}
template <class S>
const ArchitectureEncoding& BasicChildNetwork<S>::encoding() const {
    return impl_->enc;
}
template <class S>
InputShape BasicChildNetwork<S>::input_shape() const {
    return impl_->input;
}

template <class S>
template <class Other>
BasicChildNetwork<Other> BasicChildNetwork<S>::cast() const {
    auto out = std::make_unique<detail::NetworkImpl<Other>>();
    out->enc = impl_->enc;
    out->input = impl_->input;
    out->convs = impl_->convs;
    out->head_weight = impl_->head_weight;
    out->head_bias = impl_->head_bias;
    out->ops = impl_->ops;
    out->buffers = impl_->buffers;
    for (const auto& p : impl_->params)
        out->params.push_back({p.name, p.shape, std::vector<Other>(p.values.begin(), p.values.end())});
    return BasicChildNetwork<Other>(std::move(out));
}

template class BasicChildNetwork<float>;
template class BasicChildNetwork<double>;
template BasicChildNetwork<double> BasicChildNetwork<float>::cast<double>() const;
template BasicChildNetwork<float> BasicChildNetwork<double>::cast<float>() const;
template BasicChildNetwork<float> BasicChildNetwork<float>::cast<float>() const;
template BasicChildNetwork<double> BasicChildNetwork<double>::cast<double>() const;

std::size_t parameter_count(const ArchitectureEncoding& enc, int input_channels) {
    return ChildNetwork::compile(enc, InputShape{input_channels, 1, 1}, 0).parameter_count();
}

// ---------------------------------------------------------------------------
// Snapshots

namespace {
constexpr char kSnapshotMagic[8] = {'B', 'L', 'N', 'S', 'N', 'E', 'T', '1'};
}

void save_snapshot(const ChildNetwork& net, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open snapshot for writing: " + path.string());
    const auto& enc = net.encoding();
    const auto in = net.input_shape();
    out.write(kSnapshotMagic, sizeof kSnapshotMagic);
    out << to_text(enc) << '\n'
        << enc.stem_channels << ' ' << enc.num_classes << ' ' << in.channels << ' ' << in.height << ' ' << in.width
        << ' ' << net.parameter_count() << '\n';
    for (const auto& p : net.parameters())
        out.write(reinterpret_cast<const char*>(p.values.data()),
                  static_cast<std::streamsize>(p.values.size() * sizeof(float)));
    if (!out) throw IoError("failed writing snapshot: " + path.string());
}

ChildNetwork load_snapshot(const std::filesystem::path& path, const ArchitectureEncoding& expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open snapshot: " + path.string());
    char magic[sizeof kSnapshotMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kSnapshotMagic, sizeof magic) != 0)
        throw IoError("not a network snapshot: " + path.string());
    std::string text;
    std::getline(in, text);
    ArchitectureEncoding stored;
    InputShape shape;
    std::size_t count = 0;
    in >> stored.stem_channels >> stored.num_classes >> shape.channels >> shape.height >> shape.width >> count;
    in.get();
    if (!in) throw IoError("corrupt snapshot header: " + path.string());
    if (text != to_text(expected) || stored.stem_channels != expected.stem_channels ||
        stored.num_classes != expected.num_classes)
        throw LookupError("snapshot encoding '" + text + "' does not match expected '" + to_text(expected) + "'");
    auto net = ChildNetwork::compile(expected, shape, 0);
    if (net.parameter_count() != count) throw IoError("snapshot parameter count mismatch: " + path.string());
    for (auto& p : net.parameters())
        in.read(reinterpret_cast<char*>(p.values.data()), static_cast<std::streamsize>(p.values.size() * sizeof(float)));
    if (!in) throw IoError("truncated snapshot: " + path.string());
    return net;
}

}  // namespace biasless
