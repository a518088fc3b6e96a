#pragma once

#include <string>
#include <vector>

#include "flashsplit/codec/cross_decoder.hpp"
#include "flashsplit/diffusion/denoiser.hpp"
#include "flashsplit/scene/dataset.hpp"

namespace flashsplit {

struct MethodOutput {
    int sample_id = 0;
    Tensor estimate;
    Tensor mask; // optional [1,1,H,W]; empty = every pixel counts
};

struct EvalRow {
    int sample_id = 0;
    std::string method;
    std::string target; // "T" or "R"
    double psnr_db = 0.0;
    double ssim_val = 0.0;
};

// Scores estimates against the sample's ground truth for the given target.
// Difference methods only estimate the flash term, so their "T" rows are
// judged against theta*T; model outputs are judged against the clean layers.
std::vector<EvalRow> evaluate_separation(const Dataset& ds, const std::string& method,
                                         const std::string& target,
                                         const std::vector<MethodOutput>& outputs);

// Everything the learned methods need at eval time; classical methods need
// none of it.
struct LearnedStack {
    const CodecState* codec = nullptr;
    const DualDenoiserState* stage1 = nullptr;
    const DualDenoiserState* stage1_single = nullptr;
    const CrossDecoderState* dec_t = nullptr;
    const CrossDecoderState* dec_r = nullptr;
    int steps = 50;
    uint64_t seed = 11;
};

extern const std::vector<std::string> kAllMethods;

// Rejects unknown names, difference methods on tonemapped data, and learned
// methods whose checkpoints are absent from the stack.
void check_methods(const std::vector<std::string>& methods, const LearnedStack& stack,
                   bool tonemapped);

// per-sample stage-1 sampling seeds; salt keeps distinct passes independent
std::vector<uint64_t> separation_seeds(const LearnedStack& stack, const std::vector<int>& ids,
                                       uint64_t salt);

// Runs the requested methods over the given samples, writes eval.csv,
// summary.json and a bar chart under out_dir, and returns the summary.
// extra is merged into the summary for provenance.
json compare_methods(const Dataset& ds, const std::vector<int>& ids,
                     const std::vector<std::string>& methods, const LearnedStack& stack,
                     const std::string& out_dir, const json& extra = json::object());

} // namespace flashsplit
