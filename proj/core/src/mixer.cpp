#include "mixforge/mixer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mixforge/data.hpp"
#include "mixforge/errors.hpp"

namespace mixforge {

MixStrategy parse_strategy(const std::string& name) {
    if (name == "simple") return MixStrategy::kSimple;
    if (name == "mixup") return MixStrategy::kMixup;
    if (name == "cutmix") return MixStrategy::kCutmix;
    if (name == "transformmix" || name == "full") return MixStrategy::kFull;
    if (name == "stn-only") return MixStrategy::kStnOnly;
    if (name == "mpn-only") return MixStrategy::kMpnOnly;
    if (name == "softmax-cam") return MixStrategy::kSoftmaxCam;
    if (name == "degenerate") return MixStrategy::kDegenerate;
    throw ConfigError("unknown strategy: " + name);
}

std::string strategy_name(MixStrategy s) {
    switch (s) {
        case MixStrategy::kSimple: return "simple";
        case MixStrategy::kMixup: return "mixup";
        case MixStrategy::kCutmix: return "cutmix";
        case MixStrategy::kFull: return "transformmix";
        case MixStrategy::kStnOnly: return "stn-only";
        case MixStrategy::kMpnOnly: return "mpn-only";
        case MixStrategy::kSoftmaxCam: return "softmax-cam";
        case MixStrategy::kDegenerate: return "degenerate";
    }
    throw InternalError("strategy_name: unhandled strategy");
}

bool strategy_needs_mixer(MixStrategy s) {
    switch (s) {
        case MixStrategy::kFull:
        case MixStrategy::kStnOnly:
        case MixStrategy::kMpnOnly:
        case MixStrategy::kSoftmaxCam:
        case MixStrategy::kDegenerate: return true;
        default: return false;
    }
}

bool strategy_needs_teacher(MixStrategy s) {
    switch (s) {
        case MixStrategy::kFull:
        case MixStrategy::kStnOnly:
        case MixStrategy::kMpnOnly:
        case MixStrategy::kSoftmaxCam: return true;
        default: return false;
    }
}

MixStreams MixStreams::from_seed(std::uint64_t run_seed) {
    return MixStreams{derive_stream(run_seed, "pairing"), derive_stream(run_seed, "coeffs"),
                      derive_stream(run_seed, "noise")};
}

Tensor sample_coefficients(double alpha, int k, RngStream& rng) {
    if (alpha <= 0) throw ConfigError("sample_coefficients: alpha must be positive");
    if (k < 2) throw ConfigError("sample_coefficients: k must be >= 2");
    Tensor lam({k});
    Scalar sum = 0;
    for (int i = 0; i < k; ++i) {
        lam[i] = rng.gamma(alpha, 1.0);
        sum += lam[i];
    }
    if (sum <= 0) {
        // Degenerate underflow (possible only for tiny alpha): fall back to
        // the distribution mean.
        lam.fill(Scalar(1) / k);
        return lam;
    }
    for (int i = 0; i < k; ++i) lam[i] /= sum;
    return lam;
}

Tensor sample_coefficients_batch(double alpha, int k, int batch, RngStream& rng) {
    Tensor out({batch, k});
    for (int b = 0; b < batch; ++b) {
        const Tensor lam = sample_coefficients(alpha, k, rng);
        std::memcpy(out.data() + static_cast<std::int64_t>(b) * k, lam.data(),
                    static_cast<std::size_t>(k) * sizeof(Scalar));
    }
    return out;
}

Tensor sample_noise(RngStream& rng, int out_w, int out_h, int noise_grid) {
    if (noise_grid < 1) throw ConfigError("sample_noise: noise grid must be >= 1");
    if (out_w < 1 || out_h < 1) throw InputError("sample_noise: bad target dims");
    Tensor grid({noise_grid, noise_grid});
    for (std::int64_t i = 0; i < grid.numel(); ++i) grid[i] = rng.normal();
    return bilinear_resize(grid, out_h, out_w);
}

Tensor lambda_channels(const Tensor& lambdas, int h, int w) {
    if (lambdas.rank() != 2) throw InternalError("lambda_channels: lambdas must be (B,k)");
    const int B = lambdas.dim(0), k = lambdas.dim(1);
    Tensor out({B, k - 1, h, w});
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < k - 1; ++i) {
            Scalar* dst = out.data() + (static_cast<std::int64_t>(b) * (k - 1) + i) * hw;
            std::fill(dst, dst + hw, lambdas.at2(b, i));
        }
    return out;
}

bool is_identity_theta(const Tensor& thetas) {
    if (thetas.rank() != 3 || thetas.dim(1) != 2 || thetas.dim(2) != 3) return false;
    static const Scalar id[6] = {1, 0, 0, 0, 1, 0};
    for (int b = 0; b < thetas.dim(0); ++b)
        for (int q = 0; q < 6; ++q)
            if (thetas[static_cast<std::int64_t>(b) * 6 + q] != id[q]) return false;
    return true;
}

Tensor identity_thetas(int batch) {
    Tensor t({batch, 2, 3});
    for (int b = 0; b < batch; ++b) {
        t[static_cast<std::int64_t>(b) * 6 + 0] = 1;
        t[static_cast<std::int64_t>(b) * 6 + 4] = 1;
    }
    return t;
}

Value warp_affine(const Value& field, const Value& theta, WarpPadding padding) {
    // Constant identity transforms pass the field through untouched, which
    // keeps degenerate configurations bit-exact.
    if (!theta->requires_grad && is_identity_theta(theta->val)) return field;
    return grid_sample_affine(field, theta, padding);
}

namespace {

Tensor gather_batch(const Tensor& src, const std::vector<int>& pairs, int slot, int k) {
    const int B = src.dim(0);
    const std::int64_t row = src.numel() / B;
    Tensor out(src.shape());
    for (int b = 0; b < B; ++b) {
        const int j = pairs[static_cast<std::size_t>(b) * k + slot];
        std::memcpy(out.data() + static_cast<std::int64_t>(b) * row,
                    src.data() + static_cast<std::int64_t>(j) * row,
                    static_cast<std::size_t>(row) * sizeof(Scalar));
    }
    return out;
}

void validate_mask_sums(const std::vector<Value>& masks_k) {
    const auto& shape = masks_k[0]->val.shape();
    Tensor sum = Tensor::zeros(shape);
    for (const auto& m : masks_k) {
        check_same_shape(m->val, sum, "mix masks");
        for (std::int64_t i = 0; i < sum.numel(); ++i) sum[i] += m->val[i];
    }
    for (std::int64_t i = 0; i < sum.numel(); ++i)
        if (std::abs(sum[i] - 1) > 1e-6)
            throw InternalError("mix: mask pixel sums deviate from 1 beyond 1e-6");
}

}  // namespace

MixedBatchValue mix(const std::vector<Value>& images_k, const std::vector<Value>& thetas_k,
                    const std::vector<Value>& masks_k, const Tensor& lambdas,
                    const std::vector<int>& labels_k, int num_classes, WarpPadding padding) {
    const int k = static_cast<int>(images_k.size());
    if (k < 1 || static_cast<int>(thetas_k.size()) != k || static_cast<int>(masks_k.size()) != k)
        throw InputError("mix: images, thetas and masks must agree on k");
    const int B = images_k[0]->val.dim(0);
    if (lambdas.rank() != 2 || lambdas.dim(0) != B || lambdas.dim(1) != k)
        throw InputError("mix: lambdas must be (B,k)");
    if (static_cast<int>(labels_k.size()) != B * k) throw InputError("mix: labels_k must be (B*k)");
    for (int b = 0; b < B; ++b) {
        Scalar row = 0;
        for (int i = 0; i < k; ++i) {
            const Scalar l = lambdas.at2(b, i);
            if (l < 0) throw InputError("mix: negative mixing coefficient");
            row += l;
        }
        if (std::abs(row - 1) > 1e-9) throw InputError("mix: coefficients do not sum to 1");
    }
    validate_mask_sums(masks_k);

    Value out;
    for (int i = 0; i < k; ++i) {
        Value warped = warp_affine(images_k[static_cast<std::size_t>(i)],
                                   thetas_k[static_cast<std::size_t>(i)], padding);
        Value term = mul_channels(warped, masks_k[static_cast<std::size_t>(i)]);
        out = i == 0 ? term : add(out, term);
    }

    Tensor soft({B, num_classes});
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < k; ++i) {
            const int cls = labels_k[static_cast<std::size_t>(b) * k + i];
            if (cls < 0 || cls >= num_classes) throw InputError("mix: label out of range");
            soft.at2(b, cls) += lambdas.at2(b, i);
        }
    return MixedBatchValue{out, std::move(soft)};
}

// ---------------------------------------------------------------------------
// MixingModule
// ---------------------------------------------------------------------------

MixingModule::MixingModule(const MixerConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    if (cfg_.k < 2) throw ConfigError("mixer: k must be >= 2");
    if (cfg_.alpha <= 0) throw ConfigError("mixer: alpha must be positive");
    if (cfg_.mask_layers < 1) throw ConfigError("mixer: mask net needs at least one layer");
    if (cfg_.mask_channels < 1) throw ConfigError("mixer: mask channels must be >= 1");
    if (cfg_.mask_kernel < 1 || cfg_.mask_kernel % 2 == 0)
        throw ConfigError("mixer: mask kernel must be odd (spatial preservation)");
    if (cfg_.noise_grid < 1) throw ConfigError("mixer: noise grid must be >= 1");
    if (cfg_.input_w < 4 || cfg_.input_h < 4)
        throw ConfigError("mixer: native resolution must be at least 4x4");
    if (cfg_.tau_min <= 0 || cfg_.tau_init < cfg_.tau_min)
        throw ConfigError("mixer: need tau_init >= tau_min > 0");

    RngStream rng = derive_stream(init_seed, "init:mixer");
    const int k = cfg_.k;

    // f_s: conv(8ch,7x7) -> pool -> relu -> conv(10ch,5x5) -> pool -> relu ->
    // dense(32) -> relu -> dense(k*6). Same-padded convolutions so small
    // native resolutions survive the two poolings.
    fs_conv1_ = Conv2dLayer(2 * k, 8, 7, 1, 3, rng);
    fs_conv2_ = Conv2dLayer(8, 10, 5, 1, 2, rng);
    const int h2 = cfg_.input_h / 2 / 2;
    const int w2 = cfg_.input_w / 2 / 2;
    fs_flat_dim_ = 10 * h2 * w2;
    fs_fc1_ = LinearLayer(fs_flat_dim_, 32, rng);
    fs_fc2_ = LinearLayer(32, k * 6, rng);
    // Identity initialization: zero final weights, bias = k identity affines,
    // so an untrained module is an exact no-op transform.
    fs_fc2_.weight->val.fill(0);
    for (int i = 0; i < k; ++i) {
        fs_fc2_.bias->val[static_cast<std::int64_t>(i) * 6 + 0] = 1;
        fs_fc2_.bias->val[static_cast<std::int64_t>(i) * 6 + 4] = 1;
    }

    // f_m: mask_layers same-padded convolutions + 1x1 projection to k maps.
    int in_ch = 2 * k - 1;
    for (int l = 0; l < cfg_.mask_layers; ++l) {
        fm_convs_.emplace_back(in_ch, cfg_.mask_channels, cfg_.mask_kernel, 1, cfg_.mask_kernel / 2,
                               rng);
        in_ch = cfg_.mask_channels;
    }
    fm_out_ = Conv2dLayer(in_ch, k, 1, 1, 0, rng);

    log_tau_ = make_leaf(Tensor::scalar(std::log(cfg_.tau_init)));
}

double MixingModule::tau() const { return std::exp(log_tau_->val[0]); }

void MixingModule::clamp_tau() {
    log_tau_->val[0] = std::max(log_tau_->val[0], std::log(cfg_.tau_min));
}

std::vector<NamedTensor> MixingModule::named_parameters() {
    std::vector<NamedTensor> out;
    fs_conv1_.collect("fs.conv1", out);
    fs_conv2_.collect("fs.conv2", out);
    fs_fc1_.collect("fs.fc1", out);
    fs_fc2_.collect("fs.fc2", out);
    for (std::size_t i = 0; i < fm_convs_.size(); ++i)
        fm_convs_[i].collect("fm.conv" + std::to_string(i), out);
    fm_out_.collect("fm.out", out);
    out.push_back({"log_tau", log_tau_});
    return out;
}

std::vector<Value> MixingModule::trainable_parameters() {
    std::vector<Value> out;
    for (auto& p : named_parameters())
        if (p.value->requires_grad) out.push_back(p.value);
    return out;
}

void MixingModule::set_trainable(bool trainable) {
    for (auto& p : named_parameters()) p.value->requires_grad = trainable;
}

Value MixingModule::predict_transforms(const std::vector<Value>& saliencies,
                                       const Tensor& lambdas, const Value& noise) {
    if (static_cast<int>(saliencies.size()) != cfg_.k)
        throw InputError("predict_transforms: expected k saliency maps");
    const int B = saliencies[0]->val.dim(0);
    for (const auto& s : saliencies) {
        const auto& sh = s->val.shape();
        if (sh.size() != 4 || sh[0] != B || sh[1] != 1 || sh[2] != cfg_.input_h ||
            sh[3] != cfg_.input_w)
            throw InputError("predict_transforms: saliency maps must be (B,1,H,W) at the native resolution");
    }
    if (noise->val.rank() != 4 || noise->val.dim(0) != B || noise->val.dim(1) != 1 ||
        noise->val.dim(2) != cfg_.input_h || noise->val.dim(3) != cfg_.input_w)
        throw InputError("predict_transforms: noise must be (B,1,H,W) at the native resolution");

    std::vector<Value> channels = saliencies;
    channels.push_back(make_value(lambda_channels(lambdas, cfg_.input_h, cfg_.input_w), false));
    channels.push_back(noise);
    Value h = concat_dim1(channels);  // (B, 2k, H, W)
    h = relu(maxpool2(fs_conv1_.forward(h)));
    h = relu(maxpool2(fs_conv2_.forward(h)));
    h = reshape(h, {B, fs_flat_dim_});
    h = relu(fs_fc1_.forward(h));
    return fs_fc2_.forward(h);  // (B, k*6)
}

Value MixingModule::apply_affine(const Value& field, const Value& theta) const {
    return warp_affine(field, theta, cfg_.padding);
}

std::vector<Value> MixingModule::predict_masks(const std::vector<Value>& warped_saliencies,
                                               const Tensor& lambdas) {
    if (static_cast<int>(warped_saliencies.size()) != cfg_.k)
        throw InputError("predict_masks: expected k saliency maps");
    const auto& sh = warped_saliencies[0]->val.shape();
    if (sh.size() != 4 || sh[1] != 1) throw InputError("predict_masks: maps must be (B,1,H,W)");
    const int B = sh[0], H = sh[2], W = sh[3];
    for (const auto& s : warped_saliencies) check_same_shape(s->val, warped_saliencies[0]->val, "predict_masks");

    std::vector<Value> channels = warped_saliencies;
    channels.push_back(make_value(lambda_channels(lambdas, H, W), false));
    Value h = concat_dim1(channels);  // (B, 2k-1, H, W)
    for (auto& conv : fm_convs_) h = relu(conv.forward(h));
    Value logits = fm_out_.forward(h);  // (B, k, H, W)

    Value inv_tau = vexp(scale(log_tau_, -1));
    Value sm = softmax_channels(mul_scalar_value(logits, inv_tau));
    std::vector<Value> masks;
    masks.reserve(static_cast<std::size_t>(cfg_.k));
    for (int i = 0; i < cfg_.k; ++i) masks.push_back(slice_dim1(sm, i, 1));
    (void)B;
    return masks;
}

std::vector<Value> MixingModule::saliency_softmax_masks(const std::vector<Value>& saliencies) {
    if (static_cast<int>(saliencies.size()) != cfg_.k)
        throw InputError("saliency_softmax_masks: expected k maps");
    Value stacked = concat_dim1(saliencies);  // (B, k, H, W)
    Value inv_tau = vexp(scale(log_tau_, -1));
    Value sm = softmax_channels(mul_scalar_value(stacked, inv_tau));
    std::vector<Value> masks;
    masks.reserve(static_cast<std::size_t>(cfg_.k));
    for (int i = 0; i < cfg_.k; ++i) masks.push_back(slice_dim1(sm, i, 1));
    return masks;
}

MixState MixingModule::sample_mix_state(int batch_size, MixStreams& streams) const {
    if (batch_size < 1) throw InputError("sample_mix_state: empty batch");
    MixState st;
    st.batch = batch_size;
    st.k = cfg_.k;
    st.pairs = pair_batch(batch_size, cfg_.k, streams.pairing);
    st.lambdas = sample_coefficients_batch(cfg_.alpha, cfg_.k, batch_size, streams.coeffs);
    st.noise = Tensor({batch_size, 1, cfg_.input_h, cfg_.input_w});
    for (int b = 0; b < batch_size; ++b) {
        const Tensor field = sample_noise(streams.noise, cfg_.input_w, cfg_.input_h, cfg_.noise_grid);
        std::memcpy(st.noise.data() + static_cast<std::int64_t>(b) * cfg_.input_h * cfg_.input_w,
                    field.data(), static_cast<std::size_t>(field.numel()) * sizeof(Scalar));
    }
    return st;
}

MixedBatchValue MixingModule::mix_with_state(const Tensor& images, const std::vector<int>& labels,
                                             int num_classes, const TeacherHandle* teacher,
                                             const MixState& state, MixTrace* trace) {
    if (images.rank() != 4) throw InputError("mix_with_state: images must be (B,C,H,W)");
    const int B = images.dim(0), H = images.dim(2), W = images.dim(3);
    if (static_cast<int>(labels.size()) != B) throw InputError("mix_with_state: one label per image");
    if (state.batch != B || state.k != cfg_.k) throw InputError("mix_with_state: state/batch mismatch");
    const int k = cfg_.k;
    const MixStrategy strat = cfg_.strategy;
    if (!strategy_needs_mixer(strat))
        throw ConfigError("mix_with_state: strategy " + strategy_name(strat) +
                          " does not run through the mixing module");
    if (strategy_needs_teacher(strat) && teacher == nullptr)
        throw DependencyError("mix_with_state: strategy " + strategy_name(strat) +
                              " requires a teacher for CAM saliency");

    // Per-slot gathered labels, shared by every strategy.
    std::vector<int> labels_k(static_cast<std::size_t>(B) * k);
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < k; ++i)
            labels_k[static_cast<std::size_t>(b) * k + i] =
                labels[static_cast<std::size_t>(state.pairs[static_cast<std::size_t>(b) * k + i])];

    // Degenerate test hook: identity transforms, masks (1,0,...), coefficients
    // (1,0,...); reduces bit-exactly to the first slot.
    if (strat == MixStrategy::kDegenerate) {
        std::vector<Value> images_k, thetas_k, masks_k;
        for (int i = 0; i < k; ++i) {
            images_k.push_back(make_value(gather_batch(images, state.pairs, i, k), false));
            thetas_k.push_back(make_value(identity_thetas(B), false));
            Tensor m({B, 1, H, W});
            if (i == 0) m.fill(1);
            masks_k.push_back(make_value(std::move(m), false));
        }
        Tensor lam = Tensor::zeros({B, k});
        for (int b = 0; b < B; ++b) lam.at2(b, 0) = 1;
        MixedBatchValue out = mix(images_k, thetas_k, masks_k, lam, labels_k, num_classes, cfg_.padding);
        if (trace) {
            trace->lambdas = lam;
            trace->pairs = state.pairs;
        }
        return out;
    }

    const Tensor cams = compute_cam(images, labels, *teacher);  // (B,1,H,W)

    std::vector<Value> images_k, cams_k, cams_native_k;
    const bool needs_resize = H != cfg_.input_h || W != cfg_.input_w;
    for (int i = 0; i < k; ++i) {
        images_k.push_back(make_value(gather_batch(images, state.pairs, i, k), false));
        Tensor cam_i = gather_batch(cams, state.pairs, i, k);
        if (needs_resize) {
            Tensor native({B, 1, cfg_.input_h, cfg_.input_w});
            for (int b = 0; b < B; ++b) {
                Tensor plane({H, W});
                std::memcpy(plane.data(), cam_i.data() + static_cast<std::int64_t>(b) * H * W,
                            static_cast<std::size_t>(H) * W * sizeof(Scalar));
                const Tensor resized = resize_saliency(plane, cfg_.input_w, cfg_.input_h);
                std::memcpy(native.data() +
                                static_cast<std::int64_t>(b) * cfg_.input_h * cfg_.input_w,
                            resized.data(),
                            static_cast<std::size_t>(resized.numel()) * sizeof(Scalar));
            }
            cams_native_k.push_back(make_value(std::move(native), false));
        }
        cams_k.push_back(make_value(std::move(cam_i), false));
    }
    if (!needs_resize) cams_native_k = cams_k;

    // Transform parameters.
    const bool learned_thetas = strat == MixStrategy::kFull || strat == MixStrategy::kStnOnly;
    std::vector<Value> thetas_k;
    Value theta_flat;
    if (learned_thetas) {
        Value noise = make_value(state.noise, false);
        theta_flat = predict_transforms(cams_native_k, state.lambdas, noise);
        for (int i = 0; i < k; ++i)
            thetas_k.push_back(reshape(slice_dim1(theta_flat, i * 6, 6), {B, 2, 3}));
    } else {
        for (int i = 0; i < k; ++i) thetas_k.push_back(make_value(identity_thetas(B), false));
    }

    // Masks.
    std::vector<Value> warped_cams_k;
    for (int i = 0; i < k; ++i)
        warped_cams_k.push_back(apply_affine(cams_k[static_cast<std::size_t>(i)],
                                             thetas_k[static_cast<std::size_t>(i)]));
    std::vector<Value> masks_k;
    switch (strat) {
        case MixStrategy::kFull:
        case MixStrategy::kMpnOnly: masks_k = predict_masks(warped_cams_k, state.lambdas); break;
        case MixStrategy::kStnOnly: masks_k = saliency_softmax_masks(warped_cams_k); break;
        case MixStrategy::kSoftmaxCam: masks_k = saliency_softmax_masks(cams_k); break;
        default: throw InternalError("mix_with_state: unhandled strategy");
    }

    MixedBatchValue out =
        mix(images_k, thetas_k, masks_k, state.lambdas, labels_k, num_classes, cfg_.padding);

    if (trace) {
        trace->cams = cams;
        if (learned_thetas) trace->thetas = theta_flat->val;
        trace->gathered.clear();
        trace->warped_images.clear();
        trace->warped_cams.clear();
        trace->masks.clear();
        for (int i = 0; i < k; ++i) {
            trace->gathered.push_back(images_k[static_cast<std::size_t>(i)]->val);
            trace->warped_images.push_back(
                warp_affine(images_k[static_cast<std::size_t>(i)],
                            thetas_k[static_cast<std::size_t>(i)], cfg_.padding)
                    ->val);
            trace->warped_cams.push_back(warped_cams_k[static_cast<std::size_t>(i)]->val);
            trace->masks.push_back(masks_k[static_cast<std::size_t>(i)]->val);
        }
        trace->lambdas = state.lambdas;
        trace->pairs = state.pairs;
    }
    return out;
}

MixedBatchValue MixingModule::mix_batch(const Tensor& images, const std::vector<int>& labels,
                                        int num_classes, const TeacherHandle* teacher,
                                        MixStreams& streams, MixTrace* trace) {
    const MixState state = sample_mix_state(images.dim(0), streams);
    return mix_with_state(images, labels, num_classes, teacher, state, trace);
}

}  // namespace mixforge
