#pragma once
// Prefix featurization for the learned policy: last-observation features,
// running mean, and normalized prefix length.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stopgate/core.hpp"

namespace stopgate {

// Maps text to a fixed-length vector; supplied when observations carry
// text instead of feature vectors.
using Embedder = std::function<std::vector<double>(const std::string&)>;

// Describes how a feature vector was produced, so checkpoints can refuse
// mismatched inputs.
struct FeatureSpec {
    std::string mode = "vector";  // "vector" | "text_embedding"
    int obs_dim = 0;
    bool include_rationale = false;

    int dimension() const { return 2 * obs_dim + 1; }
};

namespace detail {
inline std::vector<double> observation_vector(const Observation& o, const Embedder& embedder) {
    if (o.features.has_value()) return *o.features;
    if (o.text.has_value() && embedder) return embedder(*o.text);
    throw UnsupportedError("featurize: observation " + std::to_string(o.index) +
                           " has no feature vector" +
                           (o.text.has_value() ? " and no embedder is configured" : " or text"));
}
}  // namespace detail

// [last-observation features | element-wise running mean | prefix_len / horizon_T].
// Dimension 2d + 1 where d is the per-observation feature dimension.
inline std::vector<double> featurize(std::span<const Observation> prefix, int horizon_T,
                                     const Embedder& embedder = nullptr) {
    if (prefix.empty()) throw RangeError("featurize: empty prefix (decisions start at 1)");
    if (horizon_T < 1) throw RangeError("featurize: horizon_T must be >= 1");

    std::vector<double> last = detail::observation_vector(prefix.back(), embedder);
    const std::size_t d = last.size();
    std::vector<double> mean(d, 0.0);
    for (const Observation& o : prefix) {
        const std::vector<double> v =
            (&o == &prefix.back()) ? last : detail::observation_vector(o, embedder);
        if (v.size() != d) {
            throw StructuralError("featurize: observation " + std::to_string(o.index) +
                                  " has dimension " + std::to_string(v.size()) +
                                  ", expected " + std::to_string(d));
        }
        for (std::size_t i = 0; i < d; ++i) mean[i] += v[i];
    }
    for (double& x : mean) x /= static_cast<double>(prefix.size());

    std::vector<double> out;
    out.reserve(2 * d + 1);
    out.insert(out.end(), last.begin(), last.end());
    out.insert(out.end(), mean.begin(), mean.end());
    out.push_back(static_cast<double>(prefix.size()) / horizon_T);
    return out;
}

}  // namespace stopgate
