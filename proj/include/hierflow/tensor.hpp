#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "hierflow/errors.hpp"
#include "hierflow/rng.hpp"

namespace hierflow::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape &s) {
	std::size_t n = 1;
	for (std::size_t d : s) n *= d;
	return n;
}

inline std::string shape_str(const Shape &s) {
	std::string out = "[";
	for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
	return out + "]";
}

struct Node {
	Shape shape;
	std::vector<double> value;
	std::vector<double> grad; // lazily sized to match value
	bool requires_grad = false;

	void ensure_grad() {
		if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
	}
};

/// Shared handle to a value in the computation graph. Dense, row-major,
/// rank 1 or 2 (scalars are shape {1}).
class Tensor {
public:
	Tensor() = default;

	static Tensor constant(Shape shape, std::vector<double> data) {
		if (shape_size(shape) != data.size())
			throw DataError("tensor data length " + std::to_string(data.size()) +
			                " != shape " + shape_str(shape));
		auto n = std::make_shared<Node>();
		n->shape = std::move(shape);
		n->value = std::move(data);
		return Tensor(std::move(n));
	}

	static Tensor scalar(double v) { return constant({1}, {v}); }

	static Tensor zeros(Shape shape) {
		std::vector<double> d(shape_size(shape), 0.0);
		return constant(std::move(shape), std::move(d));
	}

	/// Trainable leaf: participates in backward and optimizer updates.
	static Tensor param(Shape shape, std::vector<double> data) {
		Tensor t = constant(std::move(shape), std::move(data));
		t.node_->requires_grad = true;
		return t;
	}

	bool defined() const { return node_ != nullptr; }
	const Shape &shape() const { return node_->shape; }
	std::size_t rank() const { return node_->shape.size(); }
	std::size_t size() const { return node_->value.size(); }
	bool requires_grad() const { return node_->requires_grad; }

	// Handle semantics: like a smart pointer, constness of the handle does
	// not freeze the referent.
	std::vector<double> &value() const { return node_->value; }
	const std::vector<double> &grad() const {
		node_->ensure_grad();
		return node_->grad;
	}

	double item() const {
		if (size() != 1) throw DataError("item() on non-scalar tensor " + shape_str(shape()));
		return node_->value[0];
	}

	void zero_grad() const { node_->grad.assign(node_->value.size(), 0.0); }

	std::shared_ptr<Node> node() const { return node_; }

private:
	explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
	std::shared_ptr<Node> node_;
	friend class Tape;
};

/// Records primitive operations in execution order; backward replays the
/// record in exact reverse. A tape and its tensors belong to one thread.
class Tape {
public:
	// ----- elementwise with broadcasting -------------------------------
	// Shapes must match, or the smaller operand must be a scalar or a
	// suffix of the larger shape (broadcast over leading dimensions only).

	Tensor add(const Tensor &a, const Tensor &b) { return binary(a, b, Op::add); }
	Tensor sub(const Tensor &a, const Tensor &b) { return binary(a, b, Op::sub); }
	Tensor mul(const Tensor &a, const Tensor &b) { return binary(a, b, Op::mul); }

	Tensor exp(const Tensor &a) {
		Tensor out = like(a);
		for (std::size_t i = 0; i < a.size(); ++i) out.node_->value[i] = std::exp(a.value()[i]);
		record(out, {a}, [a, out]() {
			auto &ga = a.node()->grad;
			for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += out.node()->grad[i] * out.value()[i];
		});
		return out;
	}

	Tensor log(const Tensor &a) {
		Tensor out = like(a);
		for (std::size_t i = 0; i < a.size(); ++i) {
			double v = a.value()[i];
			if (!(v > 0.0)) throw NumericError("log of non-positive value " + std::to_string(v));
			out.node_->value[i] = std::log(v);
		}
		record(out, {a}, [a, out]() {
			auto &ga = a.node()->grad;
			for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += out.node()->grad[i] / a.value()[i];
		});
		return out;
	}

	Tensor tanh(const Tensor &a) {
		Tensor out = like(a);
		for (std::size_t i = 0; i < a.size(); ++i) out.node_->value[i] = std::tanh(a.value()[i]);
		record(out, {a}, [a, out]() {
			auto &ga = a.node()->grad;
			for (std::size_t i = 0; i < ga.size(); ++i) {
				double t = out.value()[i];
				ga[i] += out.node()->grad[i] * (1.0 - t * t);
			}
		});
		return out;
	}

	/// y = scale * x + shift with scalar constants.
	Tensor affine(const Tensor &a, double scale, double shift) {
		Tensor out = like(a);
		for (std::size_t i = 0; i < a.size(); ++i) out.node_->value[i] = scale * a.value()[i] + shift;
		record(out, {a}, [a, out, scale]() {
			auto &ga = a.node()->grad;
			for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += out.node()->grad[i] * scale;
		});
		return out;
	}

	// ----- matrix ------------------------------------------------------

	Tensor matmul(const Tensor &a, const Tensor &b) {
		if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
			throw DataError("matmul shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
		std::size_t p = a.shape()[0], q = a.shape()[1], r = b.shape()[1];
		Tensor out = Tensor::zeros({p, r});
		const auto &av = a.value();
		const auto &bv = b.value();
		auto &ov = out.node_->value;
		for (std::size_t i = 0; i < p; ++i)
			for (std::size_t k = 0; k < q; ++k) {
				double aik = av[i * q + k];
				if (aik == 0.0) continue;
				const double *brow = bv.data() + k * r;
				double *orow = ov.data() + i * r;
				for (std::size_t j = 0; j < r; ++j) orow[j] += aik * brow[j];
			}
		record(out, {a, b}, [a, b, out, p, q, r]() {
			const auto &g = out.node()->grad;
			if (a.requires_grad()) {
				auto &ga = a.node()->grad;
				const auto &bv = b.value();
				for (std::size_t i = 0; i < p; ++i)
					for (std::size_t j = 0; j < r; ++j) {
						double gij = g[i * r + j];
						if (gij == 0.0) continue;
						for (std::size_t k = 0; k < q; ++k) ga[i * q + k] += gij * bv[k * r + j];
					}
			}
			if (b.requires_grad()) {
				auto &gb = b.node()->grad;
				const auto &av = a.value();
				for (std::size_t i = 0; i < p; ++i)
					for (std::size_t k = 0; k < q; ++k) {
						double aik = av[i * q + k];
						if (aik == 0.0) continue;
						for (std::size_t j = 0; j < r; ++j) gb[k * r + j] += aik * g[i * r + j];
					}
			}
		});
		return out;
	}

	/// Swaps the two axes of a rank-2 tensor.
	Tensor transpose(const Tensor &a) {
		if (a.rank() != 2) throw DataError("transpose requires rank 2, got " + shape_str(a.shape()));
		std::size_t rws = a.shape()[0], cls = a.shape()[1];
		Tensor out = Tensor::zeros({cls, rws});
		for (std::size_t i = 0; i < rws; ++i)
			for (std::size_t j = 0; j < cls; ++j) out.node_->value[j * rws + i] = a.value()[i * cls + j];
		record(out, {a}, [a, out, rws, cls]() {
			auto &ga = a.node()->grad;
			const auto &g = out.node()->grad;
			for (std::size_t i = 0; i < rws; ++i)
				for (std::size_t j = 0; j < cls; ++j) ga[i * cls + j] += g[j * rws + i];
		});
		return out;
	}

	// ----- shape ops over the last axis --------------------------------

	Tensor concat_last(const Tensor &a, const Tensor &b) {
		check_same_lead(a, b, "concat_last");
		std::size_t rows = lead_count(a), ca = a.shape().back(), cb = b.shape().back();
		Shape shape = a.shape();
		shape.back() = ca + cb;
		Tensor out = Tensor::zeros(shape);
		for (std::size_t i = 0; i < rows; ++i) {
			for (std::size_t j = 0; j < ca; ++j) out.node_->value[i * (ca + cb) + j] = a.value()[i * ca + j];
			for (std::size_t j = 0; j < cb; ++j) out.node_->value[i * (ca + cb) + ca + j] = b.value()[i * cb + j];
		}
		record(out, {a, b}, [a, b, out, rows, ca, cb]() {
			const auto &g = out.node()->grad;
			if (a.requires_grad()) {
				auto &ga = a.node()->grad;
				for (std::size_t i = 0; i < rows; ++i)
					for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * (ca + cb) + j];
			}
			if (b.requires_grad()) {
				auto &gb = b.node()->grad;
				for (std::size_t i = 0; i < rows; ++i)
					for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * (ca + cb) + ca + j];
			}
		});
		return out;
	}

	/// Columns [lo, hi) of the last axis.
	Tensor slice_last(const Tensor &a, std::size_t lo, std::size_t hi) {
		std::size_t c = a.shape().back();
		if (lo >= hi || hi > c)
			throw DataError("slice_last range [" + std::to_string(lo) + "," + std::to_string(hi) +
			                ") out of bounds for width " + std::to_string(c));
		std::size_t rows = lead_count(a), w = hi - lo;
		Shape shape = a.shape();
		shape.back() = w;
		Tensor out = Tensor::zeros(shape);
		for (std::size_t i = 0; i < rows; ++i)
			for (std::size_t j = 0; j < w; ++j) out.node_->value[i * w + j] = a.value()[i * c + lo + j];
		record(out, {a}, [a, out, rows, w, c, lo]() {
			auto &ga = a.node()->grad;
			const auto &g = out.node()->grad;
			for (std::size_t i = 0; i < rows; ++i)
				for (std::size_t j = 0; j < w; ++j) ga[i * c + lo + j] += g[i * w + j];
		});
		return out;
	}

	/// Reorders the last axis: out[..., j] = a[..., perm[j]].
	Tensor permute_last(const Tensor &a, const std::vector<std::size_t> &perm) {
		std::size_t c = a.shape().back();
		if (perm.size() != c) throw DataError("permute_last: permutation length != last axis");
		std::size_t rows = lead_count(a);
		Tensor out = Tensor::zeros(a.shape());
		for (std::size_t i = 0; i < rows; ++i)
			for (std::size_t j = 0; j < c; ++j) out.node_->value[i * c + j] = a.value()[i * c + perm[j]];
		record(out, {a}, [a, out, rows, c, perm]() {
			auto &ga = a.node()->grad;
			const auto &g = out.node()->grad;
			for (std::size_t i = 0; i < rows; ++i)
				for (std::size_t j = 0; j < c; ++j) ga[i * c + perm[j]] += g[i * c + j];
		});
		return out;
	}

	Tensor softmax_last(const Tensor &a) {
		std::size_t rows = lead_count(a), c = a.shape().back();
		Tensor out = Tensor::zeros(a.shape());
		for (std::size_t i = 0; i < rows; ++i) {
			const double *x = a.value().data() + i * c;
			double *y = out.node_->value.data() + i * c;
			double mx = x[0];
			for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
			double sum = 0.0;
			for (std::size_t j = 0; j < c; ++j) {
				y[j] = std::exp(x[j] - mx);
				sum += y[j];
			}
			for (std::size_t j = 0; j < c; ++j) y[j] /= sum;
		}
		record(out, {a}, [a, out, rows, c]() {
			auto &ga = a.node()->grad;
			const auto &g = out.node()->grad;
			const auto &y = out.value();
			for (std::size_t i = 0; i < rows; ++i) {
				double dot = 0.0;
				for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
				for (std::size_t j = 0; j < c; ++j)
					ga[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
			}
		});
		return out;
	}

	/// Per-row standardization over the last axis: (x - mean) / sqrt(var + eps).
	Tensor normalize_last(const Tensor &a, double eps = 1e-5) {
		std::size_t rows = lead_count(a), c = a.shape().back();
		Tensor out = Tensor::zeros(a.shape());
		std::vector<double> inv_std(rows);
		for (std::size_t i = 0; i < rows; ++i) {
			const double *x = a.value().data() + i * c;
			double mean = 0.0;
			for (std::size_t j = 0; j < c; ++j) mean += x[j];
			mean /= static_cast<double>(c);
			double var = 0.0;
			for (std::size_t j = 0; j < c; ++j) var += (x[j] - mean) * (x[j] - mean);
			var /= static_cast<double>(c);
			inv_std[i] = 1.0 / std::sqrt(var + eps);
			double *y = out.node_->value.data() + i * c;
			for (std::size_t j = 0; j < c; ++j) y[j] = (x[j] - mean) * inv_std[i];
		}
		record(out, {a}, [a, out, rows, c, inv_std]() {
			auto &ga = a.node()->grad;
			const auto &g = out.node()->grad;
			const auto &y = out.value();
			for (std::size_t i = 0; i < rows; ++i) {
				double gmean = 0.0, gydot = 0.0;
				for (std::size_t j = 0; j < c; ++j) {
					gmean += g[i * c + j];
					gydot += g[i * c + j] * y[i * c + j];
				}
				gmean /= static_cast<double>(c);
				gydot /= static_cast<double>(c);
				for (std::size_t j = 0; j < c; ++j)
					ga[i * c + j] += inv_std[i] * (g[i * c + j] - gmean - y[i * c + j] * gydot);
			}
		});
		return out;
	}

	// ----- reductions ---------------------------------------------------

	Tensor sum(const Tensor &a) {
		double s = std::accumulate(a.value().begin(), a.value().end(), 0.0);
		Tensor out = Tensor::scalar(s);
		record(out, {a}, [a, out]() {
			auto &ga = a.node()->grad;
			double g = out.node()->grad[0];
			for (double &v : ga) v += g;
		});
		return out;
	}

	Tensor mean(const Tensor &a) {
		double inv = 1.0 / static_cast<double>(a.size());
		double s = std::accumulate(a.value().begin(), a.value().end(), 0.0) * inv;
		Tensor out = Tensor::scalar(s);
		record(out, {a}, [a, out, inv]() {
			auto &ga = a.node()->grad;
			double g = out.node()->grad[0] * inv;
			for (double &v : ga) v += g;
		});
		return out;
	}

	/// Row sums: [R, C] -> [R] (rank-1 input collapses to a scalar).
	Tensor sum_last(const Tensor &a) {
		std::size_t rows = lead_count(a), c = a.shape().back();
		Shape shape = a.shape();
		shape.pop_back();
		if (shape.empty()) shape = {1};
		Tensor out = Tensor::zeros(shape);
		for (std::size_t i = 0; i < rows; ++i) {
			double s = 0.0;
			for (std::size_t j = 0; j < c; ++j) s += a.value()[i * c + j];
			out.node_->value[i] = s;
		}
		record(out, {a}, [a, out, rows, c]() {
			auto &ga = a.node()->grad;
			const auto &g = out.node()->grad;
			for (std::size_t i = 0; i < rows; ++i)
				for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i];
		});
		return out;
	}

	/// Inverted dropout by a Bernoulli mask drawn from `rng`.
	Tensor dropout(const Tensor &a, double rate, Rng &rng) {
		if (rate <= 0.0) return a;
		if (rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
		std::vector<double> mask(a.size());
		double keep = 1.0 - rate;
		for (double &mv : mask) mv = rng.uniform() < keep ? 1.0 / keep : 0.0;
		return mul(a, Tensor::constant(a.shape(), std::move(mask)));
	}

	// ----- backward -----------------------------------------------------

	/// Reverse-mode sweep from a scalar loss. Gradients accumulate into the
	/// leaf (parameter) tensors; repeated calls without zero_grad keep
	/// accumulating. Intermediate adjoints are scratch, reset per sweep.
	void backward(const Tensor &loss) {
		if (loss.size() != 1)
			throw DataError("backward requires a scalar loss, got " + shape_str(loss.shape()));
		for (auto &step : steps_)
			if (!step.out->grad.empty()) step.out->grad.assign(step.out->value.size(), 0.0);
		loss.node()->ensure_grad();
		loss.node()->grad[0] += 1.0;
		for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
			if (it->out->grad.empty()) continue; // not on the path to the loss
			it->back();
		}
	}

	std::size_t size() const { return steps_.size(); }

	void clear() { steps_.clear(); }

private:
	enum class Op { add, sub, mul };

	struct Step {
		std::shared_ptr<Node> out;
		std::function<void()> back;
	};

	std::vector<Step> steps_;

	static Tensor like(const Tensor &a) { return Tensor::zeros(a.shape()); }

	static std::size_t lead_count(const Tensor &a) {
		if (a.rank() == 0) throw DataError("empty tensor");
		return a.size() / a.shape().back();
	}

	static void check_same_lead(const Tensor &a, const Tensor &b, const char *what) {
		if (a.rank() != b.rank())
			throw DataError(std::string(what) + ": rank mismatch");
		for (std::size_t i = 0; i + 1 < a.rank(); ++i)
			if (a.shape()[i] != b.shape()[i])
				throw DataError(std::string(what) + ": leading shape mismatch " +
				                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
	}

	// Broadcast classification: equal shapes, scalar operand, or the
	// smaller shape is a suffix of the larger (leading-batch broadcast).
	enum class Bcast { none, b_scalar, b_suffix, a_scalar, a_suffix };

	static bool is_suffix(const Shape &small, const Shape &big) {
		if (small.size() >= big.size()) return false;
		std::size_t off = big.size() - small.size();
		for (std::size_t i = 0; i < small.size(); ++i)
			if (small[i] != big[off + i]) return false;
		return true;
	}

	static Bcast classify(const Tensor &a, const Tensor &b) {
		if (a.shape() == b.shape()) return Bcast::none;
		if (b.size() == 1) return Bcast::b_scalar;
		if (a.size() == 1) return Bcast::a_scalar;
		if (is_suffix(b.shape(), a.shape())) return Bcast::b_suffix;
		if (is_suffix(a.shape(), b.shape())) return Bcast::a_suffix;
		throw DataError("elementwise shape mismatch " + shape_str(a.shape()) + " vs " +
		                shape_str(b.shape()) + " (only leading-batch broadcast supported)");
	}

	Tensor binary(const Tensor &a, const Tensor &b, Op op) {
		Bcast bc = classify(a, b);
		if (bc == Bcast::a_scalar || bc == Bcast::a_suffix) {
			// Normalize so the broadcast operand is always `b`.
			const Tensor &big = b;
			const Tensor &small = a;
			return binary_impl(big, small, op, /*swapped=*/true,
			                   bc == Bcast::a_scalar ? Bcast::b_scalar : Bcast::b_suffix);
		}
		return binary_impl(a, b, op, /*swapped=*/false, bc);
	}

	Tensor binary_impl(const Tensor &a, const Tensor &b, Op op, bool swapped, Bcast bc) {
		std::size_t total = a.size();
		std::size_t period = bc == Bcast::none ? total : (bc == Bcast::b_scalar ? 1 : b.size());
		Tensor out = Tensor::zeros(a.shape());
		const auto &av = a.value();
		const auto &bv = b.value();
		auto &ov = out.node_->value;
		for (std::size_t i = 0; i < total; ++i) {
			double x = av[i], y = bv[i % period];
			double lhs = swapped ? y : x, rhs = swapped ? x : y;
			switch (op) {
				case Op::add: ov[i] = lhs + rhs; break;
				case Op::sub: ov[i] = lhs - rhs; break;
				case Op::mul: ov[i] = lhs * rhs; break;
			}
		}
		record(out, {a, b}, [a, b, out, op, swapped, total, period]() {
			const auto &g = out.node()->grad;
			const auto &av = a.value();
			const auto &bv = b.value();
			double sign_a = (op == Op::sub && swapped) ? -1.0 : 1.0;
			double sign_b = (op == Op::sub && !swapped) ? -1.0 : 1.0;
			if (a.requires_grad()) {
				auto &ga = a.node()->grad;
				for (std::size_t i = 0; i < total; ++i)
					ga[i] += g[i] * (op == Op::mul ? bv[i % period] : sign_a);
			}
			if (b.requires_grad()) {
				auto &gb = b.node()->grad;
				for (std::size_t i = 0; i < total; ++i)
					gb[i % period] += g[i] * (op == Op::mul ? av[i] : sign_b);
			}
		});
		return out;
	}

	void record(Tensor &out, std::initializer_list<Tensor> inputs, std::function<void()> back) {
		bool needs = false;
		for (const Tensor &t : inputs) needs = needs || t.requires_grad();
		if (!needs) return;
		out.node_->requires_grad = true;
		for (const Tensor &t : inputs) t.node()->ensure_grad();
		steps_.push_back(Step{out.node_, std::move(back)});
	}
};

} // namespace hierflow::ad
