#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mixforge/autodiff.hpp"
#include "mixforge/nn.hpp"
#include "mixforge/rng.hpp"
#include "mixforge/saliency.hpp"

namespace mixforge {

// Mixing strategies share one config surface: the learned pipeline, its
// ablations, the classical baselines, and plain supervised training.
enum class MixStrategy {
    kSimple,      // no mixing
    kMixup,       // global convex combination
    kCutmix,      // rectangular patch replacement
    kFull,        // learned transforms + learned masks
    kStnOnly,     // learned transforms, masks = softmax of warped CAMs
    kMpnOnly,     // identity transforms, learned masks
    kSoftmaxCam,  // identity transforms, masks = softmax of raw CAMs
    kDegenerate,  // masks (1,0,..), identity transforms, lambda (1,0,..) — test hook
};

MixStrategy parse_strategy(const std::string& name);
std::string strategy_name(MixStrategy s);
// Strategies that run through the mixing module (need MixerConfig/weights).
bool strategy_needs_mixer(MixStrategy s);
// Strategies that need teacher CAMs.
bool strategy_needs_teacher(MixStrategy s);

struct MixerConfig {
    int k = 2;
    double alpha = 1.0;
    MixStrategy strategy = MixStrategy::kFull;
    // Mask-prediction network (sensitivity-sweep surface).
    int mask_layers = 3;
    int mask_channels = 32;
    int mask_kernel = 3;
    // Noise field: low-resolution standard-normal grid upsampled to W x H.
    int noise_grid = 4;
    double tau_init = 1.0;
    double tau_min = 1e-3;
    // Native resolution the transform net was built for (its dense layer
    // pins this); CAMs from other resolutions are resized onto it.
    int input_w = 32;
    int input_h = 32;
    WarpPadding padding = WarpPadding::kZeros;
    // Provenance carried into checkpoint sidecars.
    std::string source_dataset;
    std::string teacher_id;
};

// Named RNG sub-streams feeding the stochastic parts of mixing.
struct MixStreams {
    RngStream pairing;
    RngStream coeffs;
    RngStream noise;

    static MixStreams from_seed(std::uint64_t run_seed);
};

// One draw from Dirichlet(alpha, ..., alpha) over k entries; for k=2 this is
// (lambda, 1-lambda) with lambda ~ Beta(alpha, alpha).
Tensor sample_coefficients(double alpha, int k, RngStream& rng);
Tensor sample_coefficients_batch(double alpha, int k, int batch, RngStream& rng);  // (B,k)

// Noise field: noise_grid x noise_grid standard normals, bilinearly
// upsampled to (out_h, out_w).
Tensor sample_noise(RngStream& rng, int out_w, int out_h, int noise_grid = 4);

// Sampled stochastic state of one mixing step (fixable for evaluation).
struct MixState {
    int batch = 0;
    int k = 0;
    std::vector<int> pairs;  // (B*k) row-major; column 0 is the batch itself
    Tensor lambdas;          // (B,k)
    Tensor noise;            // (B,1,native_h,native_w)
};

// Intermediate artifacts for visualization and diagnostics.
struct MixTrace {
    Tensor cams;                        // (B,1,H,W) for the raw batch
    Tensor thetas;                      // (B, k*6)
    std::vector<Tensor> gathered;       // k x (B,C,H,W) inputs per slot
    std::vector<Tensor> warped_images;  // k x (B,C,H,W)
    std::vector<Tensor> warped_cams;    // k x (B,1,H,W)
    std::vector<Tensor> masks;          // k x (B,1,H,W)
    Tensor lambdas;                     // (B,k)
    std::vector<int> pairs;             // (B*k)
};

struct MixedBatchValue {
    Value images;   // (B,C,H,W), differentiable
    Tensor labels;  // (B,num_classes) soft labels on the simplex
};

// True when every per-sample theta is exactly [[1,0,0],[0,1,0]].
bool is_identity_theta(const Tensor& thetas);

// Identity affine parameters for a batch: (B,2,3).
Tensor identity_thetas(int batch);

// grid_sample_affine plus an exact pass-through for constant identity thetas.
Value warp_affine(const Value& field, const Value& theta, WarpPadding padding);

// (k-1) constant channels carrying lambda_1..lambda_{k-1}: (B,k-1,H,W).
Tensor lambda_channels(const Tensor& lambdas, int h, int w);

// Eq-style combiner: x' = sum_i m_i (*) warp(x_i; theta_i), y' = sum_i
// lambda_i y_i. Masks must sum to 1 per pixel within 1e-6 (internal error
// otherwise). `labels_k` is (B*k) row-major class ids.
MixedBatchValue mix(const std::vector<Value>& images_k, const std::vector<Value>& thetas_k,
                    const std::vector<Value>& masks_k, const Tensor& lambdas,
                    const std::vector<int>& labels_k, int num_classes, WarpPadding padding);

// The learnable mixing module: transform predictor f_s, mask predictor f_m,
// and the log-temperature scalar.
class MixingModule {
  public:
    MixingModule(const MixerConfig& cfg, std::uint64_t init_seed);

    const MixerConfig& config() const { return cfg_; }
    MixerConfig& mutable_config() { return cfg_; }

    double tau() const;
    const Value& log_tau() const { return log_tau_; }
    // Re-impose tau >= tau_min after an optimizer step.
    void clamp_tau();

    std::vector<NamedTensor> named_parameters();
    std::vector<Value> trainable_parameters();
    void set_trainable(bool trainable);

    // f_s: k saliency channels + (k-1) coefficient channels + 1 noise channel
    // (2k total) -> (B, k*6) affine parameters. Inputs must be at the native
    // resolution.
    Value predict_transforms(const std::vector<Value>& saliencies, const Tensor& lambdas,
                             const Value& noise);

    // Warp with this module's padding mode.
    Value apply_affine(const Value& field, const Value& theta) const;

    // f_m: k warped-saliency channels + (k-1) coefficient channels (2k-1
    // total) -> k masks (B,1,H,W), per-pixel temperature softmax.
    std::vector<Value> predict_masks(const std::vector<Value>& warped_saliencies,
                                     const Tensor& lambdas);

    // Masks as softmax of the given per-slot saliency channels over 1/tau
    // (the STN_ONLY / SOFTMAX_CAM ablations).
    std::vector<Value> saliency_softmax_masks(const std::vector<Value>& saliencies);

    // Draw pairing, coefficients and noise for one batch.
    MixState sample_mix_state(int batch_size, MixStreams& streams) const;

    // Full pipeline of Alg. 1 on a batch with the given sampled state.
    // `teacher` may be null only for strategies that need no CAMs.
    MixedBatchValue mix_with_state(const Tensor& images, const std::vector<int>& labels,
                                   int num_classes, const TeacherHandle* teacher,
                                   const MixState& state, MixTrace* trace = nullptr);

    // sample_mix_state + mix_with_state.
    MixedBatchValue mix_batch(const Tensor& images, const std::vector<int>& labels,
                              int num_classes, const TeacherHandle* teacher, MixStreams& streams,
                              MixTrace* trace = nullptr);

  private:
    MixerConfig cfg_;
    // f_s: canonical STN localization net.
    Conv2dLayer fs_conv1_, fs_conv2_;
    LinearLayer fs_fc1_, fs_fc2_;
    int fs_flat_dim_ = 0;
    // f_m: spatial-preserving conv stack + 1x1 projection.
    std::vector<Conv2dLayer> fm_convs_;
    Conv2dLayer fm_out_;
    Value log_tau_;
};

}  // namespace mixforge
