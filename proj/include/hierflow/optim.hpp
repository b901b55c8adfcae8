#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "hierflow/errors.hpp"
#include "hierflow/tensor.hpp"

namespace hierflow::ad {

/// Adam with bias correction. Defaults are the optimizer's canonical values.
class Adam {
public:
	explicit Adam(std::vector<Tensor> params, double lr = 1e-3, double beta1 = 0.9,
	              double beta2 = 0.999, double eps = 1e-8)
	    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
		m_.resize(params_.size());
		v_.resize(params_.size());
		for (std::size_t i = 0; i < params_.size(); ++i) {
			m_[i].assign(params_[i].size(), 0.0);
			v_[i].assign(params_[i].size(), 0.0);
		}
	}

	/// One update from the gradients currently stored on the parameters,
	/// then zeroes them.
	void step() {
		++t_;
		double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
		double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
		for (std::size_t i = 0; i < params_.size(); ++i) {
			Tensor &p = params_[i];
			if (p.node()->grad.size() != p.size())
				throw NumericError("adam_step: parameter has no gradient");
			const auto &g = p.grad();
			auto &val = p.value();
			for (std::size_t j = 0; j < val.size(); ++j) {
				m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
				v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
				double mhat = m_[i][j] / bc1;
				double vhat = v_[i][j] / bc2;
				val[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
			}
			p.zero_grad();
		}
	}

	std::size_t steps_taken() const { return t_; }

private:
	std::vector<Tensor> params_;
	std::vector<std::vector<double>> m_, v_;
	double lr_, beta1_, beta2_, eps_;
	std::size_t t_ = 0;
};

} // namespace hierflow::ad
