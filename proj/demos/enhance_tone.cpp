// Minimal end-to-end example: build a speech-like clip, decimate it to
// 4 kHz, lift it back, and run it through a freshly initialized model.

#include <iostream>

#include "vibra_sr/dataset.hpp"
#include "vibra_sr/metrics.hpp"
#include "vibra_sr/model.hpp"
#include "vibra_sr/training.hpp"

int main() {
    using namespace vibra_sr;

    SyntheticSpeechSpec spec;
    spec.duration_s = 2.048;
    spec.seed = 11;
    AudioSignal clean = synth_speech(spec);

    auto [input, target] = make_pretrain_pair(clean, 4000, DownsampleScheme::decimate);

    Model model(ModelConfig::tiny(), 42);
    AudioSignal enhanced = enhance(model, input, clean.sample_rate_hz);
    enhanced.samples.resize(target.samples.size());

    std::cout << "baseline lsd (input vs clean):   " << lsd(target, input) << "\n";
    std::cout << "untrained lsd (output vs clean): " << lsd(target, enhanced) << "\n";
    std::cout << "model parameters: " << model.parameter_count() << "\n";
    std::cout << "train it first (see README) for the numbers to move.\n";
    return 0;
}
