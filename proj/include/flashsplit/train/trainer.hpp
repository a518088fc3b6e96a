#pragma once

#include <functional>
#include <string>
#include <vector>

#include "flashsplit/codec/cross_decoder.hpp"
#include "flashsplit/diffusion/denoiser.hpp"
#include "flashsplit/scene/dataset.hpp"

namespace flashsplit {

struct TrainConfig {
    int steps = 2000;
    int batch = 8;
    double lr = 0.0; // 0 picks the stage default (codec 1e-3, stage1 3e-5, stage2 1e-5)
    uint64_t seed = 7;
    double misalign_max = 6.0;    // stage-1 flash augmentation, pixels
    double misalign_jitter = 0.75;
    double kl_weight = 1e-6;      // codec latent magnitude pressure
    std::string perceptual = "none"; // stage-2 extra term: "none" or "encoder"
    int log_every = 25;
    int ckpt_every = 0;           // 0 = only the final write
};

void validate_train_config(const TrainConfig& tc);
json train_config_to_json(const TrainConfig& tc);
TrainConfig train_config_from_json(const json& j);

struct TrainLog {
    std::vector<std::string> lines; // "step,loss" rows
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Optional extra stage-2 reconstruction term built in-graph.
struct PerceptualLoss {
    virtual ~PerceptualLoss() = default;
    virtual int build(Graph& g, int pred, int gt) = 0;
};

// L1 between frozen codec-encoder features of prediction and target.
struct EncoderPerceptualLoss : PerceptualLoss {
    const CodecState* codec;
    explicit EncoderPerceptualLoss(const CodecState* c) : codec(c) {}
    int build(Graph& g, int pred, int gt) override;
};

// Every trainer aborts with a training error if the loss stops being
// finite; sink fires on the ckpt_every cadence with a finite-loss state.
CodecState train_codec(const TrainConfig& tc, const CodecConfig& cc, const Dataset& ds,
                       TrainLog* log = nullptr,
                       const std::function<void(const CodecState&, int)>& sink = {});

// mean reconstruction PSNR of the codec round trip over a split
double codec_roundtrip_psnr(const CodecState& st, const Dataset& ds, const std::string& split);

DualDenoiserState train_stage1(const TrainConfig& tc, DenoiserConfig dc, const Dataset& ds,
                               const CodecState& codec, bool single_image, TrainLog* log = nullptr,
                               const std::function<void(const DualDenoiserState&, int)>& sink = {});

struct Stage2Tuple {
    int sample_id = 0;
    std::string target;  // "transmission" or "reflection"
    Tensor lat;          // stage-1 separated latent (standardized)
    Tensor composite;    // the no-flash capture being decomposed
    Tensor gt;           // clean layer
};

// Runs stage-1 sampling over the given train samples with fresh random
// misalignments and returns one tuple per sample and target.
std::vector<Stage2Tuple> generate_stage2_dataset(const DualDenoiserState& st,
                                                 const CodecState& codec, const Dataset& ds,
                                                 const std::vector<int>& ids, int ddim_steps,
                                                 uint64_t seed, json* provenance = nullptr);

CrossDecoderState train_stage2(const TrainConfig& tc, const std::vector<Stage2Tuple>& tuples,
                               const CodecState& codec, const std::string& target,
                               PerceptualLoss* perceptual = nullptr, TrainLog* log = nullptr,
                               const std::function<void(const CrossDecoderState&, int)>& sink = {});

} // namespace flashsplit
