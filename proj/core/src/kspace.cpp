#include "mapn/kspace.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mapn/error.hpp"
#include "mapn/random.hpp"

namespace mapn::kspace {

namespace {

using cplx = std::complex<double>;

bool is_pow2(std::int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

void require_pow2(const ComplexImage& x, const char* what)
{
    if (!is_pow2(x.height) || !is_pow2(x.width)) {
        throw ConfigError(std::string(what) + ": extents must be powers of two, got " + std::to_string(x.height) +
                          "x" + std::to_string(x.width));
    }
}

// In-place iterative radix-2 transform, unscaled; sign -1 forward, +1 inverse.
// `twiddle[k]` holds exp(sign * 2 pi i k / n) for k < n/2.
void fft1d(std::vector<cplx>& a, const std::vector<cplx>& twiddle)
{
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t stride = n / len;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                const cplx u = a[i + k];
                const cplx v = a[i + k + len / 2] * twiddle[k * stride];
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }
}

// Centred orthonormal transform of every line: fftshift(F(ifftshift(line))) / sqrt(n).
void transform_lines(std::vector<cplx>& data, std::int64_t lines, std::int64_t n, std::int64_t stride,
                     std::int64_t step, int sign)
{
    std::vector<cplx> buf(static_cast<std::size_t>(n));
    std::vector<cplx> twiddle(static_cast<std::size_t>(n / 2));
    for (std::int64_t k = 0; k < n / 2; ++k) {
        twiddle[k] = std::polar(1.0, sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    const auto half = n / 2;
    for (std::int64_t l = 0; l < lines; ++l) {
        const auto base = l * step;
        for (std::int64_t i = 0; i < n; ++i) buf[i] = data[base + ((i + half) % n) * stride];
        fft1d(buf, twiddle);
        for (std::int64_t k = 0; k < n; ++k) data[base + ((k + half) % n) * stride] = buf[k] * scale;
    }
}

ComplexImage transform(const ComplexImage& in, int sign, Domain out_domain)
{
    std::vector<cplx> data(in.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = {in.real[i], in.imag[i]};
    transform_lines(data, in.height, in.width, 1, in.width, sign);
    transform_lines(data, in.width, in.height, in.width, 1, sign);
    ComplexImage out(in.height, in.width, out_domain);
    for (std::size_t i = 0; i < data.size(); ++i) {
        out.real[i] = data[i].real();
        out.imag[i] = data[i].imag();
    }
    return out;
}

void require_same_extent(const ComplexImage& a, const ComplexImage& b, const char* what)
{
    if (a.height != b.height || a.width != b.width) {
        throw ConfigError(std::string(what) + ": extent mismatch " + std::to_string(a.height) + "x" +
                          std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
    }
}

void require_mask_width(const ComplexImage& x, const SamplingMask& mask, const char* what)
{
    if (mask.width() != x.width) {
        throw ConfigError(std::string(what) + ": mask width " + std::to_string(mask.width()) +
                          " does not match image width " + std::to_string(x.width));
    }
}

}  // namespace

ComplexImage::ComplexImage(std::int64_t h, std::int64_t w, Domain d)
  : height(h)
  , width(w)
  , real(static_cast<std::size_t>(h * w), 0.0)
  , imag(static_cast<std::size_t>(h * w), 0.0)
  , domain(d)
{
}

std::vector<double> ComplexImage::magnitude() const
{
    std::vector<double> m(size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::hypot(real[i], imag[i]);
    return m;
}

ComplexImage fft2(const ComplexImage& img)
{
    if (img.domain != Domain::image) throw ConfigError("fft2: input must be in the image domain");
    require_pow2(img, "fft2");
    return transform(img, -1, Domain::kspace);
}

ComplexImage ifft2(const ComplexImage& ks)
{
    if (ks.domain != Domain::kspace) throw ConfigError("ifft2: input must be in k-space");
    require_pow2(ks, "ifft2");
    return transform(ks, +1, Domain::image);
}

std::int64_t SamplingMask::sampled() const { return std::count(columns.begin(), columns.end(), true); }

double SamplingMask::density() const
{
    return columns.empty() ? 0.0 : static_cast<double>(sampled()) / static_cast<double>(columns.size());
}

std::string SamplingMask::serialize() const
{
    char cf[64];
    auto res = std::to_chars(cf, cf + sizeof cf, center_fraction);
    std::string out = std::to_string(columns.size()) + " " + std::to_string(acceleration) + " " +
                      std::string(cf, res.ptr) + " " + std::to_string(seed) + " : ";
    for (bool b : columns) out += b ? '1' : '0';
    return out;
}

SamplingMask SamplingMask::parse(std::string_view line)
{
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) throw DataError("mask line lacks ':' separator");
    std::istringstream head{std::string(line.substr(0, colon))};
    std::int64_t w = 0;
    std::string cf_text;
    SamplingMask m;
    if (!(head >> w >> m.acceleration >> cf_text >> m.seed)) throw DataError("malformed mask header");
    auto res = std::from_chars(cf_text.data(), cf_text.data() + cf_text.size(), m.center_fraction);
    if (res.ec != std::errc{} || res.ptr != cf_text.data() + cf_text.size()) {
        throw DataError("malformed mask center fraction '" + cf_text + "'");
    }
    auto bits = line.substr(colon + 1);
    while (!bits.empty() && bits.front() == ' ') bits.remove_prefix(1);
    while (!bits.empty() && (bits.back() == '\n' || bits.back() == '\r' || bits.back() == ' ')) bits.remove_suffix(1);
    if (static_cast<std::int64_t>(bits.size()) != w) {
        throw DataError("mask bitstring has " + std::to_string(bits.size()) + " columns, header says " +
                        std::to_string(w));
    }
    for (char c : bits) {
        if (c != '0' && c != '1') throw DataError("mask bitstring contains '" + std::string(1, c) + "'");
        m.columns.push_back(c == '1');
    }
    return m;
}

double default_center_fraction(int acceleration)
{
    switch (acceleration) {
    case 4: return 0.08;
    case 6: return 0.06;
    default: return acceleration <= 1 ? 1.0 : 0.32 / acceleration;
    }
}

SamplingMask make_cartesian_mask(std::int64_t width, int acceleration, double center_fraction, std::uint64_t seed)
{
    if (width < 1) throw ConfigError("mask width must be positive");
    if (acceleration < 1) throw ConfigError("acceleration must be >= 1, got " + std::to_string(acceleration));
    SamplingMask m;
    m.acceleration = acceleration;
    m.center_fraction = center_fraction;
    m.seed = seed;
    if (acceleration == 1) {
        m.columns.assign(static_cast<std::size_t>(width), true);
        return m;
    }
    const auto center = static_cast<std::int64_t>(std::lround(center_fraction * static_cast<double>(width)));
    const auto target =
        static_cast<std::int64_t>(std::lround(static_cast<double>(width) / static_cast<double>(acceleration)));
    if (center_fraction * static_cast<double>(width) < 1.0) {
        throw ConfigError("center_fraction * W must be >= 1 (got " + std::to_string(center_fraction) + " * " +
                          std::to_string(width) + ")");
    }
    if (center > width) throw ConfigError("requested centre lines exceed the mask width");
    if (center > target) {
        throw ConfigError("centre lines (" + std::to_string(center) + ") exceed the " + std::to_string(target) +
                          " lines allowed at " + std::to_string(acceleration) + "x");
    }
    m.columns.assign(static_cast<std::size_t>(width), false);
    const auto first = width / 2 - center / 2;
    for (std::int64_t c = first; c < first + center; ++c) m.columns[c] = true;

    std::vector<std::int64_t> pool;
    for (std::int64_t c = 0; c < width; ++c) {
        if (!m.columns[c]) pool.push_back(c);
    }
    Rng rng(seed);
    // Partial Fisher-Yates: the first `remaining` entries are a uniform draw without replacement.
    const auto remaining = target - center;
    for (std::int64_t i = 0; i < remaining; ++i) {
        const auto j = i + static_cast<std::int64_t>(rng.index(static_cast<std::uint64_t>(pool.size() - i)));
        std::swap(pool[i], pool[j]);
        m.columns[pool[i]] = true;
    }
    return m;
}

ComplexImage undersample(const ComplexImage& x, const SamplingMask& mask)
{
    if (x.domain != Domain::image) throw ConfigError("undersample: input must be in the image domain");
    require_mask_width(x, mask, "undersample");
    ComplexImage s = fft2(x);
    for (std::int64_t r = 0; r < s.height; ++r) {
        for (std::int64_t c = 0; c < s.width; ++c) {
            if (mask.columns[c]) continue;
            s.real[r * s.width + c] = 0.0;
            s.imag[r * s.width + c] = 0.0;
        }
    }
    return s;
}

ComplexImage data_consistency(const ComplexImage& pred, const ComplexImage& measured, const SamplingMask& mask)
{
    require_same_extent(pred, measured, "data_consistency");
    require_mask_width(pred, mask, "data_consistency");
    if (pred.domain != Domain::kspace || measured.domain != Domain::kspace) {
        throw ConfigError("data_consistency: both inputs must be in k-space");
    }
    ComplexImage out = pred;
    for (std::int64_t r = 0; r < out.height; ++r) {
        for (std::int64_t c = 0; c < out.width; ++c) {
            if (!mask.columns[c]) continue;
            out.real[r * out.width + c] = measured.real[r * out.width + c];
            out.imag[r * out.width + c] = measured.imag[r * out.width + c];
        }
    }
    return out;
}

Tensor to_network(const ComplexImage& x) { return to_network(std::vector<ComplexImage>{x}); }

Tensor to_network(const std::vector<ComplexImage>& xs)
{
    if (xs.empty()) throw ConfigError("to_network: empty batch");
    const auto h = xs.front().height, w = xs.front().width;
    const auto plane = static_cast<std::size_t>(h * w);
    Tensor t({static_cast<std::int64_t>(xs.size()), 2, h, w});
    for (std::size_t b = 0; b < xs.size(); ++b) {
        require_same_extent(xs.front(), xs[b], "to_network");
        std::copy(xs[b].real.begin(), xs[b].real.end(), t.ptr() + (2 * b) * plane);
        std::copy(xs[b].imag.begin(), xs[b].imag.end(), t.ptr() + (2 * b + 1) * plane);
    }
    return t;
}

ComplexImage from_network(const Tensor& t, std::int64_t batch_index)
{
    if (t.rank() != 4 || t.dim(1) != 2) {
        throw ConfigError("from_network: expected [B,2,H,W], got " + to_string(t.shape()));
    }
    if (batch_index < 0 || batch_index >= t.dim(0)) throw ConfigError("from_network: batch index out of range");
    ComplexImage x(t.dim(2), t.dim(3));
    const auto plane = static_cast<std::size_t>(x.height * x.width);
    const double* base = t.ptr() + 2 * batch_index * plane;
    std::copy(base, base + plane, x.real.begin());
    std::copy(base + plane, base + 2 * plane, x.imag.begin());
    return x;
}

namespace {

void write_item(Tensor& t, std::int64_t b, const ComplexImage& x)
{
    const auto plane = static_cast<std::size_t>(x.height * x.width);
    std::copy(x.real.begin(), x.real.end(), t.ptr() + 2 * b * plane);
    std::copy(x.imag.begin(), x.imag.end(), t.ptr() + (2 * b + 1) * plane);
}

void add_item(Tensor& t, std::int64_t b, const ComplexImage& x)
{
    const auto plane = static_cast<std::size_t>(x.height * x.width);
    double* re = t.ptr() + 2 * b * plane;
    double* im = re + plane;
    for (std::size_t i = 0; i < plane; ++i) {
        re[i] += x.real[i];
        im[i] += x.imag[i];
    }
}

}  // namespace

Var dc_layer(Var image, const std::vector<ComplexImage>& measured, const SamplingMask& mask, std::optional<Var> lambda)
{
    const Tensor& X = image.value();
    if (X.rank() != 4 || X.dim(1) != 2) throw ConfigError("dc_layer: expected [B,2,H,W], got " + to_string(X.shape()));
    const auto batch = X.dim(0), h = X.dim(2), w = X.dim(3);
    if (static_cast<std::int64_t>(measured.size()) != batch) {
        throw ConfigError("dc_layer: " + std::to_string(measured.size()) + " measurements for batch of " +
                          std::to_string(batch));
    }
    if (mask.width() != w) throw ConfigError("dc_layer: mask width does not match image width");
    double lam = 0.0;
    if (lambda) {
        if (lambda->value().size() != 1) throw ConfigError("dc_layer: lambda must hold one value");
        lam = lambda->value()[0];
        if (!std::isfinite(lam)) throw NumericError("dc_layer: non-finite lambda");
    }
    // Negative weights are clamped to zero; the clamp passes no gradient.
    const bool clamped = lam < 0.0;
    lam = std::max(lam, 0.0);
    const bool soft = lambda.has_value();

    Tensor Y(X.shape());
    std::vector<ComplexImage> predicted;  // k-space before DC, needed for the lambda gradient
    for (std::int64_t b = 0; b < batch; ++b) {
        const auto& s = measured[b];
        if (s.height != h || s.width != w || s.domain != Domain::kspace) {
            throw ConfigError("dc_layer: measurement " + std::to_string(b) + " has wrong extent or domain");
        }
        ComplexImage k = fft2(from_network(X, b));
        if (soft) predicted.push_back(k);
        for (std::int64_t r = 0; r < h; ++r) {
            for (std::int64_t c = 0; c < w; ++c) {
                if (!mask.columns[c]) continue;
                const auto i = static_cast<std::size_t>(r * w + c);
                if (soft) {
                    k.real[i] = (k.real[i] + lam * s.real[i]) / (1.0 + lam);
                    k.imag[i] = (k.imag[i] + lam * s.imag[i]) / (1.0 + lam);
                } else {
                    k.real[i] = s.real[i];
                    k.imag[i] = s.imag[i];
                }
            }
        }
        write_item(Y, b, ifft2(k));
    }

    std::vector<Var> inputs{image};
    if (lambda) inputs.push_back(*lambda);
    auto backward = [mask, measured, predicted = std::move(predicted), batch, h, w, lam, soft,
                     clamped](Graph& graph,
                                                                                             std::size_t self) {
        const Tensor& gy = graph.grad(self);
        const auto& in = graph.inputs(self);
        const bool need_x = graph.requires_grad(in[0]);
        const bool need_lam = soft && !clamped && graph.requires_grad(in[1]);
        double dlam = 0.0;
        for (std::int64_t b = 0; b < batch; ++b) {
            // Adjoint of the unitary ifft2 is fft2 and vice versa.
            ComplexImage gk = fft2(from_network(gy, b));
            for (std::int64_t r = 0; r < h; ++r) {
                for (std::int64_t c = 0; c < w; ++c) {
                    if (!mask.columns[c]) continue;
                    const auto i = static_cast<std::size_t>(r * w + c);
                    if (need_lam) {
                        const double dr = (measured[b].real[i] - predicted[b].real[i]) / ((1.0 + lam) * (1.0 + lam));
                        const double di = (measured[b].imag[i] - predicted[b].imag[i]) / ((1.0 + lam) * (1.0 + lam));
                        dlam += gk.real[i] * dr + gk.imag[i] * di;
                    }
                    gk.real[i] = soft ? gk.real[i] / (1.0 + lam) : 0.0;
                    gk.imag[i] = soft ? gk.imag[i] / (1.0 + lam) : 0.0;
                }
            }
            if (need_x) add_item(graph.grad_slot(in[0]), b, ifft2(gk));
        }
        if (need_lam) graph.grad_slot(in[1])[0] += dlam;
    };
    return image.graph->record(soft ? "dc_soft" : "dc_hard", std::move(Y), std::move(inputs), backward);
}

}  // namespace mapn::kspace
