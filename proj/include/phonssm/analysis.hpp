#pragma once

#include <array>
#include <string>
#include <vector>

#include "phonssm/data.hpp"
#include "phonssm/model.hpp"

namespace phonssm {

struct EvalReport {
    double top1 = 0.0;
    double topk = 0.0;
    double mean_loss = 0.0;
    int n = 0;
    std::vector<int> predictions;
};

EvalReport evaluate_dataset(const ModelParams& params, const ModelConfig& cfg,
                            const DatasetFile& ds, int threads, int topk = 5);

/// Mean |cos| between pooled component streams over a dataset; diagonal 1.
Tensor component_cosine_matrix(const ModelParams& params, const ModelConfig& cfg,
                               const DatasetFile& ds, int threads);
double offdiag_mean(const Tensor& m);

/// 5-fold cross-validated accuracy of a multinomial linear classifier
/// trained by full-batch gradient descent (500 steps, lr 0.1).
double linear_probe(const Tensor& embeddings, const std::vector<int>& labels, int folds = 5);

/// Pooled component embeddings of every record for one PDM branch.
Tensor branch_embeddings(const ModelParams& params, const ModelConfig& cfg,
                         const DatasetFile& ds, int component, int threads);

struct InterventionOutcome {
    int pair_id = 0;
    int component = 0;
    int pre_pred = -1;
    int post_pred = -1;
    bool flipped_to_partner = false;
    bool control = false;
};

/// Re-run the classification head of sample a with component i's pooled
/// embedding and similarity vector taken from sample b; everything else
/// (including the temporal summary) stays fixed.
InterventionOutcome intervene(const ModelParams& params, const ModelConfig& cfg,
                              const DatasetRecord& a, const DatasetRecord& b, int component,
                              bool control = false, int pair_id = 0);

struct InterventionSummary {
    int n_treatment = 0, treatment_flips = 0;
    int n_control = 0, control_flips = 0;
    double treatment_rate = 0.0, control_rate = 0.0;
    double p_value = 1.0;
    std::vector<InterventionOutcome> outcomes;
};

/// Sample ≥ min_n minimal-pair interventions (plus matched control swaps of
/// a non-differing component) from a labeled dataset.
InterventionSummary run_interventions(const ModelParams& params, const ModelConfig& cfg,
                                      const DatasetFile& ds, int min_n, std::uint64_t seed,
                                      int threads, int swap_components = 1);

int phonological_distance(const std::array<int, 4>& a, const std::array<int, 4>& b);

/// Fraction of unordered class pairs at phonological distance <= 1.
double minimal_pair_density(const std::vector<std::array<int, 4>>& phon_labels);

struct ErrorHistogram {
    std::array<int, 5> counts{};      // indexed by distance 0..4
    std::array<double, 5> fractions{};
    int total_errors = 0;
};
ErrorHistogram error_stratification(const std::vector<int>& predictions,
                                    const std::vector<int>& labels,
                                    const std::vector<std::array<int, 4>>& class_tuples);

struct BenchRow {
    int t = 0;
    double ssm_ms = 0.0;
    double attn_ms = 0.0;
};
/// Median-of-9 wall times of the streaming scan vs a T×T attention oracle
/// at the same width.
std::vector<BenchRow> bench_scaling(const std::vector<int>& ts, int d, int ds);
double model_samples_per_sec(const ModelParams& params, const ModelConfig& cfg, int n_samples);

/// P[X >= k] for X ~ Binomial(n, p0), evaluated in log space.
double binomial_tail_pvalue(int k, int n, double p0);

// ----- finite-difference gate -----

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::vector<std::pair<std::string, double>> per_tensor;
    std::uint64_t seed_used = 0;
};

ModelConfig micro_config();

/// Central finite differences of the full training loss against the tape
/// gradient over every parameter tensor of the micro configuration. Draws
/// that land a pre-activation within 1e-4 of a kink are re-rolled.
GradCheckReport micro_gradcheck(std::uint64_t seed = 0, int max_coords_per_tensor = 0);

// ----- compositional zero-shot protocol -----
//
// Sign prototypes of classes absent from training carry no signal, so
// unseen tuples are scored against imputed prototypes: per component value,
// average the similarity vectors (and temporal summaries) of the training
// samples carrying that value, then push the composed concatenation through
// the embedding projection.

struct ComponentStats {
    // per axis, per value: mean of the full head input [s_hand ∥ s_loc ∥
    // s_mov ∥ s_ori ∥ ḡ] over training samples carrying that value; makes no
    // assumption about which stream ended up encoding which factor
    std::array<std::vector<Tensor>, kNumComponents> mean_cat;
    std::array<std::vector<int>, kNumComponents> counts;
    Tensor global_cat;
};

ComponentStats component_stats(const ModelParams& params, const ModelConfig& cfg,
                               const DatasetFile& train_ds, int threads);

/// Row c: trained prototype for seen classes, imputed embedding otherwise.
Tensor composed_sign_bank(const ModelParams& params, const ModelConfig& cfg,
                          const ComponentStats& stats,
                          const std::vector<std::array<int, 4>>& class_tuples,
                          const std::vector<char>& is_seen);

/// Classify against an explicit prototype bank (cosine / τ).
EvalReport evaluate_with_bank(const ModelParams& params, const ModelConfig& cfg,
                              const Tensor& bank, const DatasetFile& ds, int threads,
                              int topk = 5);

}  // namespace phonssm
