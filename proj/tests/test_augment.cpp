#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include "support.hpp"

using namespace somnus;

namespace {

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::size_t count_pipe_lines(const std::string& text) {
  std::size_t n = 0;
  for (const auto& l : lines(text)) n += l.find('|') != std::string::npos;
  return n;
}

const BehaviorTable& clean_ten() {
  static const BehaviorTable t = run_pipeline(generate_fixture(5, 10, 40, default_planted_signal()), PipelineConfig{}).table;
  return t;
}

AugmentConfig cfg_with(std::vector<std::string> columns) {
  AugmentConfig c;
  c.columns = std::move(columns);
  return c;
}

const std::vector<std::string> kShown = {"screen_minutes", "steps_total", kLagFeature};

class FailingClient : public GeneratorClient {
 public:
  std::string complete(const std::string&) override {
    throw Error(Errc::kGeneratorUnavailable, "network down");
  }
};

class CountingClient : public GeneratorClient {
 public:
  std::string complete(const std::string& prompt) override {
    const int now = ++in_flight;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    --in_flight;
    return inner.complete(prompt);
  }
  MockGenerator inner{1, 0.0};
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};
};

}  // namespace

TEST(Prompt, ThreeRowsTwoFeaturesFiveRequested) {
  PromptWindow w{"p1", {"a", "b", "y"}, {{1, 2, 0.8}, {3, 4, 0.85}, {5, 6, 0.9}}};
  const auto text = build_prompt(w, 5);
  EXPECT_EQ(count_pipe_lines(text), 4u);  // header + 3 data lines
  EXPECT_NE(text.find(" 5 "), std::string::npos);
  EXPECT_EQ(text, build_prompt(w, 5));
  const auto p = parse_prompt(text);
  EXPECT_EQ(p.requested, 5);
  EXPECT_EQ(p.columns, w.columns);
  EXPECT_EQ(p.rows, w.rows);
}

TEST(Prompt, TwentyRowWindow) {
  PromptWindow w{"p1", {"a", "y"}, {}};
  for (int i = 0; i < 20; ++i) w.rows.push_back({1.0 * i, 0.5});
  EXPECT_EQ(count_pipe_lines(build_prompt(w, 5)), 21u);
}

TEST(Prompt, MalformedPromptsAreRejected) {
  EXPECT_THROW(parse_prompt("hello"), Error);
  EXPECT_THROW(parse_prompt("Task: generate 5 rows\nno table here\n"), Error);
  EXPECT_THROW(parse_prompt("Task: generate 5 rows\na|b\n1|x\n"), Error);
  try {
    mock_complete(1, "nonsense");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kMalformedPrompt);
  }
}

TEST(Mock, DeterministicForSeedAndPrompt) {
  PromptWindow w{"p1", {"a", "y"}, {{1, 0.8}, {2, 0.9}, {4, 0.85}}};
  const auto prompt = build_prompt(w, 5);
  EXPECT_EQ(mock_complete(42, prompt), mock_complete(42, prompt));
  EXPECT_NE(mock_complete(42, prompt), mock_complete(43, prompt));
}

TEST(Mock, ConstantColumnStaysConstant) {
  PromptWindow w{"p1", {"a", "y"}, {{7, 0.8}, {7, 0.9}, {7, 0.85}}};
  const auto batch = validate_and_prune(mock_complete(1, build_prompt(w, 50), 0.0), w.columns, "y");
  ASSERT_EQ(batch.accepted_rows.size(), 50u);
  for (const auto& r : batch.accepted_rows) EXPECT_EQ(r[0], 7.0);
}

TEST(Mock, ColumnMeansWithinThreeStandardErrors) {
  PromptWindow w{"p1", {"a", "b", "y"}, {}};
  for (int i = 0; i < 20; ++i) w.rows.push_back({1.0 + i, 100.0 - 3.0 * i, 0.80 + 0.01 * i});
  const auto batch = validate_and_prune(mock_complete(9, build_prompt(w, 1000), 0.0), w.columns, "y");
  ASSERT_EQ(batch.accepted_rows.size(), 1000u);
  for (std::size_t c = 0; c < w.columns.size(); ++c) {
    double wm = 0, wv = 0, gm = 0;
    for (const auto& r : w.rows) wm += r[c];
    wm /= 20;
    for (const auto& r : w.rows) wv += (r[c] - wm) * (r[c] - wm);
    const double sd = std::sqrt(wv / 20);
    for (const auto& r : batch.accepted_rows) gm += r[c];
    gm /= 1000;
    EXPECT_LT(std::abs(gm - wm), 3 * sd / std::sqrt(1000.0)) << w.columns[c];
  }
}

TEST(Prune, RejectionReasons) {
  const std::vector<std::string> cols = {"y", "steps", "screen"};
  const auto b = validate_and_prune(
      "0.9|1200|300\n"
      "0.9|1200\n"
      "0.9|abc|300\n"
      "1.3|1200|300\n"
      "0.9|inf|300\n"
      "\n"
      " 0.85 | 900 | 250 \n",
      cols, "y");
  EXPECT_EQ(b.parsed_rows.size(), 6u);
  ASSERT_EQ(b.accepted_rows.size(), 2u);
  EXPECT_EQ(b.accepted_rows[0], (std::vector<double>{0.9, 1200, 300}));
  ASSERT_EQ(b.rejected.size(), 4u);
  EXPECT_EQ(b.rejected[0].reason, RejectReason::kWrongArity);
  EXPECT_EQ(b.rejected[1].reason, RejectReason::kNonNumeric);
  EXPECT_EQ(b.rejected[2].reason, RejectReason::kTargetOutOfRange);
  EXPECT_EQ(b.rejected[2].index, 3u);
  EXPECT_TRUE(b.rejected[3].reason == RejectReason::kNonFinite || b.rejected[3].reason == RejectReason::kNonNumeric);
}

TEST(Augment, TenCleanParticipantsGetFiftyRows) {
  MockGenerator mock(1, 0.0);
  const auto res = augment_training_set(clean_ten(), mock, cfg_with(kShown));
  EXPECT_EQ(res.log.eligible(), 10u);
  EXPECT_EQ(res.log.appended(), 50u);
  EXPECT_EQ(res.table.size(), clean_ten().size() + 50);
}

TEST(Augment, ShortParticipantIsSkipped) {
  auto rows = clean_ten().rows();
  const std::string victim = rows.front().pid;
  std::vector<BehaviorRow> kept;
  int n = 0;
  for (auto& r : rows) {
    if (r.pid == victim && n++ >= 12) continue;
    kept.push_back(r);
  }
  MockGenerator mock(1, 0.0);
  const auto res = augment_training_set(with_rows(clean_ten(), kept), mock, cfg_with(kShown));
  EXPECT_EQ(res.log.eligible(), 9u);
  EXPECT_EQ(res.log.appended(), 45u);
  EXPECT_TRUE(res.log.entries.front().skipped);
  EXPECT_FALSE(res.log.entries.front().skip_reason.empty());
  EXPECT_EQ(res.log.to_json()["entries"][0]["status"], "skipped");
}

TEST(Augment, AccountingReconcilesWithMalformedRows) {
  MockGenerator mock(77, 0.1);
  const auto res = augment_training_set(clean_ten(), mock, cfg_with(kShown));
  EXPECT_GT(res.log.rejected(), 0u);
  EXPECT_EQ(res.log.appended(), 5 * res.log.eligible() - res.log.rejected());
  std::size_t synthetic = 0;
  for (const auto& r : res.table.rows()) synthetic += r.synthetic;
  EXPECT_EQ(synthetic, res.log.appended());
  const auto j = res.log.to_json();
  EXPECT_EQ(j["appended_rows"], res.log.appended());
  EXPECT_EQ(j["rejected_rows"], res.log.rejected());
}

TEST(Augment, StrippingSyntheticRowsRestoresInput) {
  MockGenerator mock(3);
  const auto res = augment_training_set(clean_ten(), mock, cfg_with(kShown));
  EXPECT_EQ(strip_synthetic(res.table), clean_ten());
  EXPECT_EQ(to_csv(strip_synthetic(res.table)), to_csv(clean_ten()));
}

TEST(Augment, SyntheticRowsAreValidAndOnlyFillShownColumns) {
  MockGenerator mock(3);
  const auto res = augment_training_set(clean_ten(), mock, cfg_with(kShown));
  const auto& t = res.table;
  for (const auto& r : t.rows()) {
    if (!r.synthetic) continue;
    const auto y = r.values[t.target_index()];
    ASSERT_TRUE(y);
    EXPECT_GE(*y, 0.0);
    EXPECT_LE(*y, 1.0);
    for (std::size_t c = 0; c < t.columns().size(); ++c) {
      const bool shown = c == t.target_index() ||
                         std::find(kShown.begin(), kShown.end(), t.columns()[c]) != kShown.end();
      EXPECT_EQ(r.values[c].has_value(), shown) << t.columns()[c];
    }
  }
}

TEST(Augment, DeterministicWithMock) {
  MockGenerator a(5), b(5);
  EXPECT_EQ(augment_training_set(clean_ten(), a, cfg_with(kShown)).table,
            augment_training_set(clean_ten(), b, cfg_with(kShown)).table);
}

TEST(Augment, SyntheticDatesAvoidHeldOutRanges) {
  // long enough that every pid keeps a full window in train
  const auto clean = run_pipeline(generate_fixture(5, 10, 60, default_planted_signal()), PipelineConfig{}).table;
  const auto split = chronological_split(clean, SplitSpec{});
  auto cfg = cfg_with(kShown);
  cfg.reserved_until = split.holdout_end;
  MockGenerator mock(5);
  const auto res = augment_training_set(split.train, mock, cfg);
  std::map<std::string, std::pair<Date, Date>> held;
  for (const auto* part : {&split.val, &split.test}) {
    for (const auto& r : part->rows()) {
      auto [it, fresh] = held.try_emplace(r.pid, r.date, r.date);
      it->second.first = std::min(it->second.first, r.date);
      it->second.second = std::max(it->second.second, r.date);
    }
  }
  std::size_t checked = 0;
  for (const auto& r : res.table.rows()) {
    if (!r.synthetic) continue;
    const auto& [lo, hi] = held.at(r.pid);
    EXPECT_TRUE(r.date < lo || r.date > hi) << r.pid << " " << format_date(r.date);
    ++checked;
  }
  EXPECT_GT(checked, 0u);
}

TEST(Augment, ClientFailureAbortsWholeRun) {
  FailingClient bad;
  try {
    augment_training_set(clean_ten(), bad, cfg_with(kShown));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kGeneratorUnavailable);
  }
}

TEST(Augment, ConcurrencyIsBounded) {
  CountingClient client;
  auto cfg = cfg_with(kShown);
  cfg.max_concurrency = 3;
  const auto res = augment_training_set(clean_ten(), client, cfg);
  EXPECT_LE(client.peak.load(), 3);
  EXPECT_EQ(res.log.appended(), 50u);
  MockGenerator serial(1, 0.0);
  cfg.max_concurrency = 1;
  EXPECT_EQ(res.table, augment_training_set(clean_ten(), serial, cfg).table);
}

TEST(Augment, RejectsTablesWithMissingCells) {
  MockGenerator mock(1);
  EXPECT_THROW(augment_training_set(test::default_fixture(), mock, AugmentConfig{}), Error);
}
