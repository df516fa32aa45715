// Synthesizes one speaker reading the text ON and OFF medication, runs the
// energy segmentation on both and compares it with the ground truth.
//
//   segment_demo [seed]

#include "medstate/synthcorpus.hpp"

#include <cstdio>
#include <string>

using namespace medstate;

int main(int argc, char** argv) {
  const std::uint64_t seed = argc > 1 ? std::stoull(argv[1]) : 3;
  const SpeakerProfile spk = make_patient_profile("P001", seed);
  std::printf("speaker F0 %.0f Hz, level %.1f dBFS\n", spk.base_f0, spk.base_intensity_db);

  for (MedState st : {MedState::kOn, MedState::kOff}) {
    const auto r = synth_utterance(spk, st, TaskKind::kReadText, StateEffect{}, derive_seed(seed, "demo"));
    const SegmentList truth = truth_segments(r.truth);
    const SegmentList sns = segment_recording(r.clip, SnsFsmParams{}, seed);
    std::int64_t agree = 0;
    const std::int64_t n = std::min(truth.num_frames(), sns.num_frames());
    for (std::int64_t t = 0; t < n; ++t) agree += truth.at(t).sns == sns.at(t).sns;
    std::size_t speech_segments = 0;
    for (const auto& s : sns.segments) speech_segments += s.sns == SnsLabel::kSpeech;
    std::printf("%-3s  %.2f s  speech %.0f%%  segments %zu  frame agreement %.1f%%\n",
                std::string(state_name(st)).c_str(), r.clip.duration_s(), 100.0 * r.truth.speech_fraction(),
                speech_segments, 100.0 * static_cast<double>(agree) / static_cast<double>(n));
  }
}
