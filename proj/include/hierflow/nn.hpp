#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hierflow/rng.hpp"
#include "hierflow/tensor.hpp"

namespace hierflow::nn {

inline ad::Tensor xavier_param(std::size_t fan_in, std::size_t fan_out, Rng &rng) {
	double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
	std::vector<double> data(fan_in * fan_out);
	for (double &v : data) v = rng.uniform(-bound, bound);
	return ad::Tensor::param({fan_in, fan_out}, std::move(data));
}

/// Dense layer y = x W (+ b). Bias optional: attention projections omit it
/// so constant key shifts cannot create dead parameters under softmax.
struct Linear {
	ad::Tensor w;
	ad::Tensor b; // undefined when bias-free

	Linear() = default;

	Linear(std::size_t in, std::size_t out, Rng &rng, bool bias = true)
	    : w(xavier_param(in, out, rng)) {
		if (bias) b = ad::Tensor::param({out}, std::vector<double>(out, 0.0));
	}

	ad::Tensor operator()(ad::Tape &tape, const ad::Tensor &x) const {
		ad::Tensor y = tape.matmul(x, w);
		if (b.defined()) y = tape.add(y, b);
		return y;
	}

	void collect(const std::string &prefix, std::vector<std::pair<std::string, ad::Tensor>> &out) const {
		out.emplace_back(prefix + ".w", w);
		if (b.defined()) out.emplace_back(prefix + ".b", b);
	}
};

/// Layer normalization over the last axis with learnable gain and bias.
struct LayerNorm {
	ad::Tensor gain;
	ad::Tensor bias;

	LayerNorm() = default;

	explicit LayerNorm(std::size_t width)
	    : gain(ad::Tensor::param({width}, std::vector<double>(width, 1.0))),
	      bias(ad::Tensor::param({width}, std::vector<double>(width, 0.0))) {}

	ad::Tensor operator()(ad::Tape &tape, const ad::Tensor &x) const {
		return tape.add(tape.mul(tape.normalize_last(x), gain), bias);
	}

	void collect(const std::string &prefix, std::vector<std::pair<std::string, ad::Tensor>> &out) const {
		out.emplace_back(prefix + ".gain", gain);
		out.emplace_back(prefix + ".bias", bias);
	}
};

} // namespace hierflow::nn
