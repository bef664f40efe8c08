#pragma once

#include <map>

#include "saro/pipeline.hpp"
#include "saro/scene_io.hpp"

namespace saro {

enum class ParamGroup { kPosition, kScale, kRotation, kOpacity, kSh, kField, kDecoder };

// Everything the training loop needs: model shape, loss weights, learning
// rates with decay endpoints, and the schedule periods. Field defaults are
// the full-scale monocular profile; tiny desk-scale runs override through
// key=value configs.
struct TrainConfig {
    // model shape
    int sh_degree = 1;
    int feat_dim = 16;
    int spatial_res = 64;
    int time_res = 64;
    int level_count = 5;
    size_t init_count = 2000;
    double field_init_amplitude = 0.1;
    bool init_from_point_cloud = false; // fall back to random when absent

    // schedule
    double kappa_base = 5e-7;
    int refresh_interval = 50;
    int densify_interval = 200;
    int densify_until = 15000;
    double prune_opacity = 0.005;
    int opacity_reset_interval = 2000;
    int warmup_iters = 1000;
    int total_iters = 20000;
    size_t max_prims = 200000;
    int batch_size = 4;
    double clone_size_frac = 0.01; // of scene extent; below: clone, above: split
    double lr_mult_max = 100.0;

    // learning rates (start -> final, log-linear over total_iters)
    double lr_position = 1.6e-4, lr_position_final = 1.6e-6;
    double lr_scale = 5e-3, lr_scale_final = 5e-3;
    double lr_rotation = 1e-3, lr_rotation_final = 1e-3;
    double lr_opacity = 5e-2, lr_opacity_final = 5e-2;
    double lr_sh = 2.5e-3, lr_sh_final = 2.5e-3; // bands above zero step at 1/20 of this
    double lr_field = 3.2e-3, lr_field_final = 3.2e-6;
    double lr_decoder = 1.6e-4, lr_decoder_final = 1.6e-7;

    // loss
    double lambda1 = 0.2;
    double lambda2 = 0.8;
    Vec3 background = Vec3::Zero();

    int metrics_interval = 50;
    double state_sharpness = kDefaultSharpness;

    void validate() const; // throws SaroError on bad periods/rates

    // Sorted key=value snapshot for checkpoints; parse round-trips it.
    std::vector<std::pair<std::string, std::string>> to_pairs() const;
    void apply(const std::map<std::string, std::string>& overrides);
};

// Appendix-style presets: monocular (warm-up, random init) and multi-view
// (no warm-up, point-cloud init, longer opacity-reset period).
TrainConfig dnerf_profile();
TrainConfig multiview_profile();

// key=value lines; '#' comments; unknown keys rejected.
std::map<std::string, std::string> parse_config_file(const std::string& path);

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-15;

// In-place Adam on n scalars with shared step count t (1-based).
void adam_update(double* p, const double* g, double* m, double* v, size_t n, double lr,
                 uint64_t t);

// kappa_i = kappa_base * I_i / I_max; lr multiplier I_max / I_i clamped to
// mult_max. Applies to 4D position, scale, rotation, and zeroth-order SH.
struct Schedule {
    double kappa = 0.0;
    double lr_mult = 1.0;
};
Schedule adaptive_schedule(double integral_i, double integral_max, double kappa_base,
                           double mult_max = 100.0);

// Log-linear interpolation between the group's endpoints.
double lr_decay(const TrainConfig& cfg, uint64_t iter, ParamGroup group);

struct AdamBuf {
    std::vector<double> m, v;
    void init(size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
    }
};

struct TrainState {
    AdamBuf position, log_scale, rotation, opacity, sh; // cloud, flattened per prim
    AdamBuf field, decoder;
    std::vector<double> integral;  // I_i per primitive
    double integral_max = 0.0;
    std::vector<double> grad_accum; // sum of per-iteration 4D positional grad norms
    std::vector<Vec3> grad_vec;     // summed spatial grads; clone direction
    std::vector<uint32_t> grad_count;
    uint64_t iter = 0;
    Rng rng;

    void init(const Model& model);
};

// Recomputes I_i over [0,1] from each primitive's current (tau, sigma).
// Mutable model: queries need fresh thumbnails.
void refresh_integrals(Model& model, TrainState& state);

// One Adam step over all parameter groups with per-primitive multipliers on
// the scheduled groups. Caller guarantees grads match the model's shape.
void adam_step(Model& model, const ParamGrads& grads, TrainState& state, const TrainConfig& cfg);

struct DensifyReport {
    size_t cloned = 0, splitted = 0, pruned = 0;
};

// Clone/split primitives whose mean positional-gradient norm exceeds their
// kappa_i, then prune by activated opacity. Resets the grad accumulators and
// rebuilds per-primitive optimizer state (new rows start at zero moments).
DensifyReport densify_and_prune(Model& model, TrainState& state, const TrainConfig& cfg);

void opacity_reset(Model& model, TrainState& state);

struct TrainResult {
    Checkpoint checkpoint;
    bool aborted = false; // NaN loss; checkpoint is the last good snapshot
    double final_loss = 0.0;
    uint64_t iters_run = 0;
};

// Full loop: batch sampling, warm-up, adaptive schedule, densification,
// opacity resets, JSONL metrics (empty path disables). Deterministic in
// (dataset, config, seed).
TrainResult train(const Dataset& data, const TrainConfig& cfg, uint64_t seed,
                  const std::string& metrics_path);

} // namespace saro
