#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ctr {

/// Softmax output for one example together with its correct label.
struct ProbVector {
    std::vector<double> probs;
    int label = 0;

    std::size_t classes() const { return probs.size(); }
    double correct() const { return probs.at(static_cast<std::size_t>(label)); }
    /// The C-1 wrong-category probabilities, in class order.
    std::vector<double> wrong() const;
    /// Throws ParameterError unless entries lie in [0,1], sum to 1 +- tol and the label is in range.
    void validate(double tol = 1e-6) const;
};

/// K sub-network probability vectors for one input (multi-sample dropout).
struct SubNetOutputs {
    std::vector<ProbVector> probs;

    std::size_t k() const { return probs.size(); }
    /// Element-wise mean over the K sub-networks (the averaged prediction the mask uses).
    ProbVector average() const;
};

} // namespace ctr
