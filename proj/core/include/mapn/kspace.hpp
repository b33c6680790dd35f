#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mapn/autodiff.hpp"
#include "mapn/tensor.hpp"

namespace mapn::kspace {

enum class Domain { image, kspace };

/// A single-coil complex slice with separate real and imaginary planes.
struct ComplexImage {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<double> real;
    std::vector<double> imag;
    Domain domain = Domain::image;

    ComplexImage() = default;
    ComplexImage(std::int64_t h, std::int64_t w, Domain d = Domain::image);

    std::size_t size() const noexcept { return real.size(); }
    std::complex<double> at(std::int64_t r, std::int64_t c) const
    {
        const auto i = static_cast<std::size_t>(r * width + c);
        return {real[i], imag[i]};
    }
    std::vector<double> magnitude() const;

    friend bool operator==(const ComplexImage&, const ComplexImage&) = default;
};

/// Centred, orthonormal 2-D DFT (DC at (H/2, W/2)). H and W must be powers of two.
ComplexImage fft2(const ComplexImage& img);
ComplexImage ifft2(const ComplexImage& ks);

/// 1-D Cartesian pattern: a true column is sampled across all rows.
struct SamplingMask {
    std::vector<bool> columns;
    int acceleration = 1;
    double center_fraction = 0.0;
    std::uint64_t seed = 0;

    std::int64_t width() const noexcept { return static_cast<std::int64_t>(columns.size()); }
    std::int64_t sampled() const;
    double density() const;

    /// "W acceleration center_fraction seed : bitstring"
    std::string serialize() const;
    static SamplingMask parse(std::string_view line);

    friend bool operator==(const SamplingMask&, const SamplingMask&) = default;
};

/// Conventional centre fractions: 0.08 at 4x and 0.06 at 6x.
double default_center_fraction(int acceleration);

SamplingMask make_cartesian_mask(std::int64_t width, int acceleration, double center_fraction, std::uint64_t seed);

/// s = mask * fft2(x).
ComplexImage undersample(const ComplexImage& x, const SamplingMask& mask);

/// Measured values at sampled columns, prediction elsewhere.
ComplexImage data_consistency(const ComplexImage& pred, const ComplexImage& measured, const SamplingMask& mask);

/// Channel 0 real, channel 1 imaginary; [1,2,H,W].
Tensor to_network(const ComplexImage& x);
/// Stacks equally sized images into [B,2,H,W].
Tensor to_network(const std::vector<ComplexImage>& xs);
ComplexImage from_network(const Tensor& t, std::int64_t batch_index = 0);

/// Differentiable image-domain data-consistency layer for a [B,2,H,W] batch:
/// x -> ifft2(DC(fft2(x), measured[b])). Hard replacement when `lambda` is empty,
/// otherwise sampled values become (k + lambda*s) / (1 + lambda) with lambda a [1] tensor
/// (negative values act as 0).
Var dc_layer(Var image, const std::vector<ComplexImage>& measured, const SamplingMask& mask,
             std::optional<Var> lambda = std::nullopt);

}  // namespace mapn::kspace
