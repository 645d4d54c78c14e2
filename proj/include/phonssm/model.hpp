#pragma once

#include <functional>
#include <string>
#include <vector>

#include "phonssm/agan.hpp"
#include "phonssm/bissm.hpp"
#include "phonssm/graph.hpp"
#include "phonssm/hpc.hpp"
#include "phonssm/pdm.hpp"

namespace phonssm {

enum class Mode { Train, Eval };

/// Architectural scalars. Defaults are the reference configuration; the
/// acceptance suite overrides them with a smaller desk setup.
struct ModelConfig {
    int d = 128;
    int dc = 32;
    int gat_heads = 4;
    int gat_layers = 3;
    int ssm_layers = 4;
    int ds = 16;
    int expansion = 2;
    double dropout = 0.1;
    double tau = 0.1;
    PrototypeCounts counts;
    int k = 100;  // vocabulary size
    int t = 30;   // frames
    LandmarkLayout layout = LandmarkLayout::dominant_hand21();
    double lambda_ortho = 0.1;
    double lambda_div = 0.01;
    double label_smoothing = 0.1;
    int conv_kernel = 3;
    bool without_pdm = false;  // flat ablation: AGAN -> BiSSM -> linear head
    int de() const { return d; }
    int sim_concat_dim() const {
        return counts.hand + counts.loc + counts.mov + counts.ori + d;
    }
};

struct ModelParams {
    AganParams agan;
    std::vector<BissmLayerParams> bissm;
    // factorized path
    PdmParams pdm;
    PrototypeBanks banks;
    Tensor w_e;  // [sim_concat_dim × De]
    // flat-ablation head
    Tensor w_cls;  // [D × K]
    Tensor b_cls;  // [K]
};

ModelParams model_init(const ModelConfig& cfg, std::uint64_t seed);

/// Visit every learnable tensor in a fixed order (checkpoint, optimizer and
/// gradient bookkeeping all rely on the same order).
void for_each_param(ModelParams& p, const ModelConfig& cfg,
                    const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_param(const ModelParams& p, const ModelConfig& cfg,
                    const std::function<void(const std::string&, const Tensor&)>& fn);

std::size_t param_count(const ModelParams& p, const ModelConfig& cfg);

AnatomicalGraph build_graph(const LandmarkLayout& layout);

// ----- tape path -----

struct ModelVars {
    AganVars agan;
    std::vector<BissmLayerVars> bissm;
    PdmVars pdm{};
    std::array<VarId, kNumComponents> banks{-1, -1, -1, -1};
    VarId sign_bank = -1;
    VarId w_e = -1;
    VarId w_cls = -1, b_cls = -1;
    std::vector<VarId> ordered;  // same order as for_each_param
};

ModelVars model_register(Tape& tape, const ModelParams& p, const ModelConfig& cfg);

struct ForwardTapeOut {
    VarId logits = -1;
    std::array<VarId, kNumComponents> streams{-1, -1, -1, -1};
    std::array<VarId, kNumComponents> pooled{-1, -1, -1, -1};
    std::array<VarId, kNumComponents> sims{-1, -1, -1, -1};
    VarId g_mean = -1;
    VarId embedding = -1;
};

/// Full Alg-style composition; x is a [T·N × C] tape node.
ForwardTapeOut model_forward_tape(Tape& tape, VarId x, const ModelVars& vars,
                                  const ModelConfig& cfg, const AnatomicalGraph& graph,
                                  Mode mode, Rng* dropout_rng);

/// CE(label-smoothed) + λ_ortho·L_ortho + λ_div·mean-bank diversity.
VarId model_loss_tape(Tape& tape, const ForwardTapeOut& fwd, int label, const ModelVars& vars,
                      const ModelConfig& cfg);

// ----- plain operations -----

struct ForwardResult {
    Tensor logits;
    ComponentSet components;
    Tensor g_mean;
    std::array<Tensor, kNumComponents> sims;
    Tensor embedding;
};

ForwardResult model_forward(const LandmarkSequence& x, const ModelParams& params,
                            const ModelConfig& cfg, Mode mode,
                            std::uint64_t dropout_seed = 0);

double total_loss(const Tensor& logits, int label, const ComponentSet& components,
                  const PrototypeBanks& banks, const ModelConfig& cfg);

// ----- checkpoint container -----

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const ModelConfig& cfg);
std::pair<ModelParams, ModelConfig> load_checkpoint(const std::string& path);

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

}  // namespace phonssm
