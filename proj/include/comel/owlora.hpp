#pragma once

#include <string>
#include <vector>

#include "comel/autodiff.hpp"
#include "comel/matrix.hpp"
#include "comel/rng.hpp"

namespace comel {

struct OwloraConfig {
    double epsilon = 0.99;  // singular mass kept from the first task
    int rank = 16;          // d, per-task adapter rank
    double lambda3 = 1.0;   // intra-orthogonality weight
    void validate() const;
};

// One task's low-rank factors for a single linear layer. The layer
// weight is applied as x * W with W of shape d_in x d_out, so u spans
// input directions and v output directions: W_k = u diag(s) v^T.
struct TaskFactors {
    int task_index = 1;
    Matrix u;  // d_in x k, orthonormal columns once frozen
    Matrix s;  // 1 x k
    Matrix v;  // d_out x k
};

// Per-layer OWLoRA state: truncated first-task factors plus one set of
// factors per later task. Only the newest task's factors are trainable.
struct AdapterStack {
    std::string layer;
    int d_in = 0;
    int d_out = 0;
    int dtilde = 0;  // rank kept from the first task
    std::vector<TaskFactors> frozen;
    TaskFactors active;
    bool has_active = false;

    // Caches over the frozen factors; rebuilt by freeze_active().
    Matrix frozen_sum;  // d_in x d_out
    Matrix basis_u;     // d_in x (dtilde + (n-2)*d)
    Matrix basis_v;     // d_out x ...

    void rebuild_cache();
};

// Smallest i whose leading squared-singular-value mass reaches epsilon.
// Returns 1 for an all-zero spectrum.
int truncation_rank(const std::vector<double>& singular_values, double epsilon);

// SVD-truncate the fully trained task-1 weight. The retained factors
// replace the dense weight; dropped mass is bounded by (1-eps)*|W|_F^2.
AdapterStack truncate_first_task(const std::string& layer, const Matrix& w1, double epsilon);

// New trainable factors for task task_index: u and v are sampled
// orthonormal inside the orthogonal complement of every frozen basis,
// s starts at zero so the effective weight is unchanged. Throws on rank
// exhaustion (complement smaller than rank).
void init_adapter(AdapterStack& stack, int task_index, int rank, Rng& rng);

// Moves the active factors into the frozen set and refreshes caches.
void freeze_active(AdapterStack& stack);

// W_n = sum over all task factors (frozen plus active).
Matrix effective_weight(const AdapterStack& stack);

// Tape composition: frozen_sum + u diag(s) v^T with trainable nodes.
int effective_weight_node(ad::Tape& t, const AdapterStack& stack, int u, int s, int v);

// |U^T U - I|_F^2 + |V^T V - I|_F^2
double intra_ortho_loss(const Matrix& u, const Matrix& v);
int intra_ortho_loss_node(ad::Tape& t, int u, int v);

// (I - B B^T) g for an orthonormal-column basis B; identity when the
// basis is empty. Idempotent.
Matrix project_gradient(const Matrix& g, const Matrix& basis);

// Removes frozen-span components that optimizer steps reintroduced.
void reproject_params(AdapterStack& stack);

// Largest Frobenius overlap between the active factors and any frozen
// factor pair; test hook for the confinement invariants.
double max_frozen_overlap(const AdapterStack& stack);

}  // namespace comel
