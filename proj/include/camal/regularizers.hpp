#pragma once

// The mask-guided auxiliary objective: alpha/beta decomposition of attention
// against ground-truth masks, the beta-minus-alpha term, the suppress-only
// baseline, and the combined training objective.

#include "camal/tensor.hpp"

namespace camal::reg {

struct AlphaBetaBatch {
    Tensor alpha;  // B, mean attention inside the mask
    Tensor beta;   // B, mean attention outside the mask
};

// H: BxHxW attention in [0,1]; M: BxHxW binary mask (constant). Masks must
// contain at least one 1 and one 0 per sample.
AlphaBetaBatch alpha_beta(const Tensor& H, const Tensor& M);

// mean over the batch of (beta_b - alpha_b), in [-1, 1]
Tensor camal_term(const AlphaBetaBatch& ab);

// baseline that only suppresses out-of-mask attention: mean over batch of beta
Tensor suppress_only_term(const Tensor& H, const Tensor& M);

// total = task_loss + lambda * camal_term (as a graph scalar)
Tensor total_loss(const Tensor& task_loss, const Tensor& camal, float lambda);

struct LossBreakdown {
    double task_loss = 0.0;
    double camal_term = 0.0;
    double lambda = 0.0;
    double total = 0.0;
    double alpha_mean = 0.0;
    double beta_mean = 0.0;
};

}  // namespace camal::reg
