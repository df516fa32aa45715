#include "medstate/synthcorpus.hpp"
#include "test_util.hpp"

namespace medstate {
namespace {

using testing::error_kind_of;

SpeakerProfile profile() { return make_patient_profile("P001", 42); }

TEST(Synth, SameSeedSameSamples) {
  const auto a = synth_utterance(profile(), MedState::kOff, TaskKind::kReadSentences, StateEffect{}, 11);
  const auto b = synth_utterance(profile(), MedState::kOff, TaskKind::kReadSentences, StateEffect{}, 11);
  const auto c = synth_utterance(profile(), MedState::kOff, TaskKind::kReadSentences, StateEffect{}, 12);
  EXPECT_EQ(a.clip.samples, b.clip.samples);
  EXPECT_EQ(a.truth.sample_labels, b.truth.sample_labels);
  EXPECT_NE(a.clip.samples, c.clip.samples);
}

TEST(Synth, ClipIsValidAndLabelled) {
  const auto r = synth_utterance(profile(), MedState::kOn, TaskKind::kReadText, StateEffect{}, 3);
  EXPECT_NO_THROW(validate_clip(r.clip));
  EXPECT_EQ(r.truth.sample_labels.size(), r.clip.samples.size());
  EXPECT_EQ(r.clip.meta.state, MedState::kOn);
  EXPECT_EQ(r.clip.meta.task, TaskKind::kReadText);
  EXPECT_EQ(r.truth.sample_labels.front(), GroundTruth::kSilence);
  EXPECT_EQ(r.truth.sample_labels.back(), GroundTruth::kSilence);
}

TEST(Synth, SpeechRatioFollowsTheTarget) {
  for (MedState s : {MedState::kOn, MedState::kOff})
    for (TaskKind t : {TaskKind::kReadText, TaskKind::kStorytelling, TaskKind::kConversation}) {
      const auto r = synth_utterance(profile(), s, t, StateEffect{}, 5);
      EXPECT_NEAR(r.truth.speech_fraction(), expected_speech_ratio(t, s, StateEffect{}), 0.01)
          << task_name(t) << " " << state_name(s);
    }
}

TEST(Synth, OffStateHasLongerPausesAndLowerLevel) {
  EXPECT_LT(expected_speech_ratio(TaskKind::kStorytelling, MedState::kOff, StateEffect{}),
            expected_speech_ratio(TaskKind::kStorytelling, MedState::kOn, StateEffect{}));
  const auto on = synth_utterance(profile(), MedState::kOn, TaskKind::kStorytelling, StateEffect{}, 9);
  const auto off = synth_utterance(profile(), MedState::kOff, TaskKind::kStorytelling, StateEffect{}, 9);
  const double on_db = 20 * std::log10(synth::rms_where(on.clip.samples, on.truth.sample_labels, GroundTruth::kPatient));
  const double off_db = 20 * std::log10(synth::rms_where(off.clip.samples, off.truth.sample_labels, GroundTruth::kPatient));
  EXPECT_NEAR(on_db - off_db, 6.0, 2.0);
}

TEST(Synth, SpeechLevelAndNoiseMatchRequestedSnr) {
  SynthOptions opt;
  opt.snr_db = 20;
  const auto r = synth_utterance(profile(), MedState::kOn, TaskKind::kReadText, StateEffect{}, 4, opt);
  const double noise = synth::rms_where(r.clip.samples, r.truth.sample_labels, GroundTruth::kSilence);
  EXPECT_NEAR(noise / r.truth.noise_rms, 1.0, 0.02);
  EXPECT_NEAR(20 * std::log10(r.truth.noise_rms), profile().base_intensity_db - 20, 1e-9);
}

TEST(Synth, ZeroDeltaMakesStatesIndistinguishable) {
  const StateEffect none{0.0, {}};
  const auto on = synth::voice_params(profile(), MedState::kOn, none);
  const auto off = synth::voice_params(profile(), MedState::kOff, none);
  EXPECT_EQ(on.range, off.range);
  EXPECT_EQ(on.jitter, off.jitter);
  EXPECT_EQ(on.level_db, off.level_db);
  EXPECT_EQ(on.pause_scale, off.pause_scale);
  EXPECT_EQ(on.rate_scale, off.rate_scale);
  EXPECT_EQ(expected_speech_ratio(TaskKind::kReadText, MedState::kOn, none),
            expected_speech_ratio(TaskKind::kReadText, MedState::kOff, none));
  // Same seed gives the same waveform up to the state metadata.
  const auto a = synth_utterance(profile(), MedState::kOn, TaskKind::kReadWords, none, 2);
  const auto b = synth_utterance(profile(), MedState::kOff, TaskKind::kReadWords, none, 2);
  EXPECT_EQ(a.clip.samples, b.clip.samples);
}

TEST(Synth, OffDeviationsScaleWithDelta) {
  const auto half = synth::voice_params(profile(), MedState::kOff, StateEffect{0.5, {}});
  const auto full = synth::voice_params(profile(), MedState::kOff, StateEffect{1.0, {}});
  const auto on = synth::voice_params(profile(), MedState::kOn, StateEffect{1.0, {}});
  EXPECT_NEAR(full.jitter - on.jitter, 2 * (half.jitter - on.jitter), 1e-15);
  EXPECT_NEAR(on.level_db - full.level_db, 6.0, 1e-12);
  EXPECT_NEAR(full.range, 0.4, 1e-12);
}

TEST(Synth, RejectsBadProfileAndDelta) {
  SpeakerProfile p = profile();
  p.base_f0 = 40;
  EXPECT_EQ(error_kind_of([&] { synth_utterance(p, MedState::kOn, TaskKind::kReadText, StateEffect{}, 1); }),
            ErrorKind::kInvalidArgument);
  EXPECT_EQ(error_kind_of([&] { synth_utterance(profile(), MedState::kOn, TaskKind::kReadText, StateEffect{1.5, {}}, 1); }),
            ErrorKind::kInvalidArgument);
}

TEST(TruthSegments, LabelsFramesByCentreSample) {
  GroundTruth g;
  g.sample_labels.assign(16000, GroundTruth::kSilence);
  // Speech on samples [1600, 4800): frames whose centre (t*160 + 200) falls inside.
  std::fill(g.sample_labels.begin() + 1600, g.sample_labels.begin() + 4800, GroundTruth::kPatient);
  std::fill(g.sample_labels.begin() + 8000, g.sample_labels.begin() + 9600, GroundTruth::kTherapist);
  const SegmentList sl = truth_segments(g);
  ASSERT_TRUE(is_partition(sl, static_cast<std::int64_t>(frame_count(16000, 400, 160))));
  ASSERT_EQ(sl.segments.size(), 5u);
  EXPECT_EQ(sl.segments[1].start, 9);   // 9*160+200 = 1640 >= 1600, 8*160+200 = 1480
  EXPECT_EQ(sl.segments[1].end, 29);    // 28*160+200 = 4680 < 4800, 29*160+200 = 5040
  EXPECT_EQ(sl.segments[1].speaker, SpeakerLabel::kPatient);
  EXPECT_EQ(sl.segments[3].speaker, SpeakerLabel::kTherapist);
  EXPECT_EQ(sl.segments[3].sns, SnsLabel::kSpeech);
}

TEST(Therapist, TurnsAreLabelledAndValidated) {
  auto r = synth_utterance(profile(), MedState::kOn, TaskKind::kReadText, StateEffect{}, 7);
  AudioClip clip = r.clip;
  GroundTruth truth = r.truth;
  std::mt19937_64 rng(1);
  insert_gap(clip, truth, 0, 2.0, rng);
  const auto before = clip.samples;
  const std::vector<TherapistTurn> turns{{0.2, 1.5}};
  inject_therapist(clip, truth, make_therapist_profile(false), turns, 3);
  std::size_t labelled = 0;
  for (auto l : truth.sample_labels) labelled += l == GroundTruth::kTherapist;
  EXPECT_EQ(labelled, 24000u);
  EXPECT_NE(clip.samples, before);
  EXPECT_EQ(clip.samples[clip.samples.size() - 1], before.back());

  const std::vector<TherapistTurn> overlap{{0.1, 0.5}, {0.4, 0.5}};
  EXPECT_EQ(error_kind_of([&] { inject_therapist(clip, truth, make_therapist_profile(false), overlap, 3); }),
            ErrorKind::kInvalidArgument);
  const std::vector<TherapistTurn> past{{clip.duration_s() - 0.1, 0.5}};
  EXPECT_EQ(error_kind_of([&] { inject_therapist(clip, truth, make_therapist_profile(false), past, 3); }),
            ErrorKind::kInvalidArgument);
  const std::vector<TherapistTurn> on_speech{{2.0, clip.duration_s() - 2.5}};
  EXPECT_EQ(error_kind_of([&] { inject_therapist(clip, truth, make_therapist_profile(false), on_speech, 3); }),
            ErrorKind::kInvalidArgument);
}

TEST(Session, ConversationGetsInterjections) {
  CorpusSpec spec;
  const auto r = synth_session_recording(profile(), make_therapist_profile(false), MedState::kOff, TaskKind::kConversation,
                                         spec, 5);
  const SegmentList sl = truth_segments(r.truth);
  int turns = 0;
  for (const auto& s : sl.segments) turns += s.speaker == SpeakerLabel::kTherapist;
  EXPECT_EQ(turns, 4);
  EXPECT_EQ(sl.segments.front().sns, SnsLabel::kNonSpeech);
  spec.therapist_turns = false;
  const auto plain = synth_session_recording(profile(), make_therapist_profile(false), MedState::kOff,
                                             TaskKind::kConversation, spec, 5);
  for (auto l : plain.truth.sample_labels) ASSERT_NE(l, GroundTruth::kTherapist);
}

TEST(Corpus, LayoutAndManifestRoundTrip) {
  testing::TempDir dir("corpus");
  CorpusSpec spec;
  spec.speakers = 2;
  spec.control_speakers = 1;
  spec.seed = 3;
  const auto g = generate_corpus(spec, dir.path(), 2);
  EXPECT_EQ(g.patients.entries.size(), 2u * kAllTasks.size() * 2);
  EXPECT_EQ(g.control.entries.size(), kAllTasks.size());
  for (const auto& e : g.control.entries) EXPECT_EQ(e.state, MedState::kUnknown);
  const auto back = read_manifest(dir / "manifest.csv");
  ASSERT_EQ(back.entries.size(), g.patients.entries.size());
  for (std::size_t i = 0; i < back.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i], g.patients.entries[i]);
    const auto clip = read_wav(back.resolve(back.entries[i].path));
    const auto seg = read_segments(back.resolve(*back.entries[i].truth));
    EXPECT_TRUE(is_partition(seg, static_cast<std::int64_t>(frame_count(clip.size(), 400, 160))));
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "generation.json"));
}

TEST(Corpus, IndependentOfJobCount) {
  testing::TempDir a("corpus_a"), b("corpus_b");
  CorpusSpec spec;
  spec.speakers = 1;
  spec.control_speakers = 0;
  generate_corpus(spec, a.path(), 1);
  generate_corpus(spec, b.path(), 3);
  for (const auto& e : read_manifest(a / "manifest.csv").entries)
    EXPECT_EQ(read_wav(a.path() / e.path).samples, read_wav(b.path() / e.path).samples) << e.path;
}

TEST(Manifest, ParseErrors) {
  std::istringstream no_header("a.wav,P1,text,ON\n");
  EXPECT_EQ(error_kind_of([&] { parse_manifest(no_header, "."); }), ErrorKind::kFormat);
  std::istringstream bad_task("path,speaker_id,task,state\na.wav,P1,singing,ON\n");
  EXPECT_EQ(error_kind_of([&] { parse_manifest(bad_task, "."); }), ErrorKind::kFormat);
  std::istringstream short_row("path,speaker_id,task,state\na.wav,P1,text\n");
  EXPECT_EQ(error_kind_of([&] { parse_manifest(short_row, "."); }), ErrorKind::kFormat);
  std::istringstream ok("path,speaker_id,task,state\r\n# comment\na.wav,P1,text,OFF\r\n");
  const auto m = parse_manifest(ok, ".");
  ASSERT_EQ(m.entries.size(), 1u);
  EXPECT_EQ(m.entries[0].state, MedState::kOff);
}

}  // namespace
}  // namespace medstate
