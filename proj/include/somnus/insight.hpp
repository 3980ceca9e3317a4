#pragma once

// Demo-stage back end: predictions, what-if edits, grid-search
// recommendations and chat on top of a loaded model artifact.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "somnus/augment.hpp"
#include "somnus/config.hpp"
#include "somnus/ensemble.hpp"
#include "somnus/error.hpp"
#include "somnus/fixture.hpp"
#include "somnus/tabular.hpp"

namespace somnus {

struct UserSnapshot {
  enum class Source { kDatasetSample, kRequestSupplied };

  std::string participant_id;
  std::map<std::string, double> feature_values;
  Source source = Source::kRequestSupplied;

  bool operator==(const UserSnapshot&) const = default;
};

inline const char* to_string(UserSnapshot::Source s) {
  return s == UserSnapshot::Source::kDatasetSample ? "dataset-sample" : "request-supplied";
}

struct OverrideChange {
  double old_value = 0.0;
  double new_value = 0.0;
  bool operator==(const OverrideChange&) const = default;
};

struct WhatIfResult {
  double base_prediction = 0.0;
  double modified_prediction = 0.0;
  double delta = 0.0;
  std::map<std::string, OverrideChange> overrides;
  bool operator==(const WhatIfResult&) const = default;
};

struct Recommendation {
  std::string feature;
  double current_value = 0.0;
  double suggested_value = 0.0;
  double expected_gain = 0.0;
  std::string message;
  bool operator==(const Recommendation&) const = default;
};

struct ChatReply {
  std::string intent;  // prediction | what-if | advice
  std::string text;
  double prediction = 0.0;
  std::string band;
  std::optional<WhatIfResult> what_if;
  std::vector<std::string> suggested_questions;
};

struct FeatureInfo {
  std::string name;
  FeatureCategory category = FeatureCategory::kOther;
  double lo = 0.0;
  double hi = 1.0;
  bool adjustable = false;
  std::optional<double> current;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string cors_origin = "*";
  int grid_points = 9;
  double gain_threshold = 0.005;
  int max_recs = 3;
  double poor_below = 0.80;
  double good_above = 0.90;

  void validate() const {
    if (grid_points < 2) throw Error(Errc::kInvalidConfig, "grid_points must be >= 2");
    if (!(gain_threshold > 0)) throw Error(Errc::kInvalidConfig, "gain_threshold must be > 0");
    if (max_recs < 0) throw Error(Errc::kInvalidConfig, "max_recs must be >= 0");
    if (!(poor_below <= good_above)) throw Error(Errc::kInvalidConfig, "poor_below must be <= good_above");
    if (port < 0 || port > 65535) throw Error(Errc::kInvalidConfig, "port out of range");
  }

  static ServiceConfig from_json(const json& j) {
    expect_known_keys(j, {"host", "port", "cors_origin", "grid_points", "gain_threshold", "max_recs",
                          "poor_below", "good_above"},
                      "service");
    ServiceConfig c;
    c.host = config_value(j, "host", c.host);
    c.port = config_value(j, "port", c.port);
    c.cors_origin = config_value(j, "cors_origin", c.cors_origin);
    c.grid_points = config_value(j, "grid_points", c.grid_points);
    c.gain_threshold = config_value(j, "gain_threshold", c.gain_threshold);
    c.max_recs = config_value(j, "max_recs", c.max_recs);
    c.poor_below = config_value(j, "poor_below", c.poor_below);
    c.good_above = config_value(j, "good_above", c.good_above);
    c.validate();
    return c;
  }
};

// Fixture domains plus the lag feature; columns outside the fixture get a
// range from the sample table and are never adjustable.
inline std::map<std::string, FeatureDomain> service_domains(const std::vector<std::string>& features,
                                                            const BehaviorTable* samples) {
  std::map<std::string, FeatureDomain> known;
  for (auto& d : fixture_schema()) known[d.column] = d;
  known[kLagFeature] = lag_feature_domain();
  std::map<std::string, FeatureDomain> out;
  for (const auto& f : features) {
    if (auto it = known.find(f); it != known.end()) {
      out[f] = it->second;
      continue;
    }
    double lo = 0, hi = 1;
    if (samples && samples->has_column(f)) {
      const auto c = samples->column_index(f);
      lo = std::numeric_limits<double>::infinity();
      hi = -lo;
      for (const auto& r : samples->rows()) {
        if (r.values[c]) {
          lo = std::min(lo, *r.values[c]);
          hi = std::max(hi, *r.values[c]);
        }
      }
      if (!(lo < hi)) {
        const double v = std::isfinite(lo) ? lo : 0.0;
        lo = v - 1;
        hi = v + 1;
      }
    }
    out[f] = FeatureDomain{f, FeatureCategory::kOther, lo, hi, false};
  }
  return out;
}

inline json to_json(const WhatIfResult& w) {
  json ov = json::object();
  for (const auto& [k, v] : w.overrides) ov[k] = {{"old", v.old_value}, {"new", v.new_value}};
  return {{"base_prediction", w.base_prediction},
          {"modified_prediction", w.modified_prediction},
          {"delta", w.delta},
          {"overrides", ov}};
}

inline json to_json(const Recommendation& r) {
  return {{"feature", r.feature},
          {"current_value", r.current_value},
          {"suggested_value", r.suggested_value},
          {"expected_gain", r.expected_gain},
          {"message", r.message}};
}

inline json to_json(const ChatReply& r) {
  json j = {{"intent", r.intent},
            {"text", r.text},
            {"prediction", r.prediction},
            {"band", r.band},
            {"suggested_questions", r.suggested_questions}};
  j["what_if"] = r.what_if ? to_json(*r.what_if) : json(nullptr);
  return j;
}

inline json to_json(const FeatureInfo& f) {
  return {{"name", f.name},
          {"category", to_string(f.category)},
          {"plausible_range", {f.lo, f.hi}},
          {"adjustable", f.adjustable},
          {"current", f.current ? json(*f.current) : json(nullptr)}};
}

inline json to_json(const UserSnapshot& s) {
  return {{"participant_id", s.participant_id},
          {"feature_values", s.feature_values},
          {"source", to_string(s.source)}};
}

inline UserSnapshot snapshot_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::kBadRequest, "snapshot must be an object");
  UserSnapshot s;
  s.participant_id = j.value("participant_id", std::string{});
  auto it = j.find("feature_values");
  if (it == j.end() || !it->is_object()) {
    throw Error(Errc::kBadRequest, "snapshot.feature_values must be an object");
  }
  for (auto f = it->begin(); f != it->end(); ++f) {
    if (!f->is_number()) throw Error(Errc::kBadRequest, "feature value must be a number", f.key());
    s.feature_values[f.key()] = f->get<double>();
  }
  return s;
}

namespace insight_detail {

inline std::string fmt(const char* pattern, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Phrases in "N more <thing>" mapped to feature columns.
inline const std::vector<std::pair<std::string, std::string>>& aliases() {
  static const std::vector<std::pair<std::string, std::string>> k = {
      {"step", "steps_total"},
      {"active minute", "steps_active_minutes"},
      {"unlock", "screen_unlock_count"},
      {"screen", "screen_minutes"},
      {"phone", "screen_minutes"},
      {"green", "loc_green_space_minutes"},
      {"park", "loc_green_space_minutes"},
      {"home", "loc_time_at_home"},
      {"call", "call_night_minutes"},
  };
  return k;
}

}  // namespace insight_detail

class InsightService {
 public:
  InsightService(ModelArtifact artifact, ServiceConfig cfg = {},
                 std::optional<BehaviorTable> samples = std::nullopt,
                 std::shared_ptr<GeneratorClient> generator = nullptr)
      : artifact_(std::move(artifact)), cfg_(std::move(cfg)), generator_(std::move(generator)) {
    cfg_.validate();
    domains_ = service_domains(artifact_.feature_names, samples ? &*samples : nullptr);
    if (samples) {
      for (auto group : samples->participant_groups()) {
        const auto& last = group[group.size() - 1];
        UserSnapshot s;
        s.participant_id = last.pid;
        s.source = UserSnapshot::Source::kDatasetSample;
        bool complete = true;
        for (const auto& f : artifact_.feature_names) {
          if (!samples->has_column(f) || !last.values[samples->column_index(f)]) {
            complete = false;
            break;
          }
          s.feature_values[f] = *last.values[samples->column_index(f)];
        }
        if (complete) samples_[last.pid] = std::move(s);
      }
    }
  }

  const ModelArtifact& artifact() const { return artifact_; }
  const ServiceConfig& config() const { return cfg_; }
  const std::map<std::string, FeatureDomain>& domains() const { return domains_; }

  std::vector<std::string> sample_participants() const {
    std::vector<std::string> out;
    for (const auto& [pid, _] : samples_) out.push_back(pid);
    return out;
  }

  const UserSnapshot& sample(const std::string& pid) const {
    auto it = samples_.find(pid);
    if (it == samples_.end()) throw Error(Errc::kUnknownSession, "no sample for participant", pid);
    return it->second;
  }

  // Every model feature must be present and within [lo - w, hi + w].
  void validate_snapshot(const UserSnapshot& s) const {
    for (const auto& f : artifact_.feature_names) {
      auto it = s.feature_values.find(f);
      if (it == s.feature_values.end()) throw Error(Errc::kMissingFeature, "snapshot is missing a feature", f);
      const auto& d = domains_.at(f);
      const double v = it->second;
      if (!std::isfinite(v) || v < d.lo - d.width() || v > d.hi + d.width()) {
        throw Error(Errc::kOutOfRange, "snapshot value outside the accepted range", f);
      }
    }
  }

  double predict_snapshot(const UserSnapshot& s) const {
    validate_snapshot(s);
    return raw_predict(s.feature_values);
  }

  WhatIfResult what_if(const UserSnapshot& s, const std::map<std::string, double>& overrides) const {
    validate_snapshot(s);
    for (const auto& [name, value] : overrides) {
      auto it = domains_.find(name);
      if (it == domains_.end()) throw Error(Errc::kUnknownFeature, "override names an unknown feature", name);
      if (!std::isfinite(value) || !it->second.contains(value)) {
        throw Error(Errc::kOutOfRange, "override outside plausible range", name);
      }
    }
    WhatIfResult r;
    r.base_prediction = raw_predict(s.feature_values);
    auto modified = s.feature_values;
    for (const auto& [name, value] : overrides) {
      r.overrides[name] = {modified.at(name), value};
      modified[name] = value;
    }
    r.modified_prediction = raw_predict(modified);
    r.delta = r.modified_prediction - r.base_prediction;
    return r;
  }

  // Per adjustable feature, the best value on a uniform grid over its range.
  // Ties on the grid go to the value nearest the current one.
  std::vector<Recommendation> recommend(const UserSnapshot& s) const {
    validate_snapshot(s);
    const double base = raw_predict(s.feature_values);
    std::vector<Recommendation> out;
    for (const auto& f : artifact_.feature_names) {
      const auto& d = domains_.at(f);
      if (!d.adjustable) continue;
      auto x = s.feature_values;
      const double current = x.at(f);
      double best_value = current, best_pred = -1.0;
      for (int i = 0; i < cfg_.grid_points; ++i) {
        const double v = i + 1 == cfg_.grid_points
                             ? d.hi
                             : d.lo + d.width() * static_cast<double>(i) / (cfg_.grid_points - 1);
        x[f] = v;
        const double p = raw_predict(x);
        if (p > best_pred || (p == best_pred && std::abs(v - current) < std::abs(best_value - current))) {
          best_pred = p;
          best_value = v;
        }
      }
      const double gain = best_pred - base;
      if (gain >= cfg_.gain_threshold) {
        Recommendation r{f, current, best_value, gain, {}};
        r.message = recommendation_message(r);
        out.push_back(std::move(r));
      }
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
      if (a.expected_gain != b.expected_gain) return a.expected_gain > b.expected_gain;
      return a.feature < b.feature;
    });
    if (out.size() > static_cast<std::size_t>(cfg_.max_recs)) out.resize(static_cast<std::size_t>(cfg_.max_recs));
    return out;
  }

  std::string band(double prediction) const {
    if (prediction < cfg_.poor_below) return "poor";
    if (prediction > cfg_.good_above) return "good";
    return "fair";
  }

  std::string template_advice(double prediction) const {
    const auto b = band(prediction);
    if (b == "poor") {
      return "Your predicted sleep efficiency is low. Try cutting late screen use and keeping a steady "
             "bedtime tonight.";
    }
    if (b == "fair") {
      return "Your predicted sleep efficiency is fair. A bit more daytime activity and less evening "
             "screen time could push it higher.";
    }
    return "Your predicted sleep efficiency looks good. Keep your current routine going.";
  }

  ChatReply chat(const UserSnapshot& s, const std::string& text) const {
    validate_snapshot(s);
    const std::string t = insight_detail::lower(text);
    ChatReply reply;
    reply.prediction = raw_predict(s.feature_values);
    reply.band = band(reply.prediction);

    static const std::regex more_re(R"((\d[\d,]*(?:\.\d+)?)\s+(more|fewer|less)\s+([a-z ]+))");
    std::smatch m;
    if (std::regex_search(t, m, more_re)) {
      std::string amount = m[1].str();
      amount.erase(std::remove(amount.begin(), amount.end(), ','), amount.end());
      double n = std::stod(amount);
      if (m[2].str() != "more") n = -n;
      const std::string thing = m[3].str();
      std::string feature;
      for (const auto& [alias, column] : insight_detail::aliases()) {
        if (thing.find(alias) != std::string::npos) {
          feature = column;
          break;
        }
      }
      reply.intent = "what-if";
      if (feature.empty() || !domains_.count(feature)) {
        reply.text = "I can't model that change with the current model. Try asking about "
                     "one of the listed features.";
      } else {
        const auto& d = domains_.at(feature);
        const double target = std::clamp(s.feature_values.at(feature) + n, d.lo, d.hi);
        auto w = what_if(s, {{feature, target}});
        reply.prediction = w.modified_prediction;
        reply.band = band(w.modified_prediction);
        reply.text = "Changing " + feature + " to " + insight_detail::fmt("%.0f", target) +
                     " moves your predicted sleep efficiency from " +
                     insight_detail::fmt("%.2f", w.base_prediction) + " to " +
                     insight_detail::fmt("%.2f", w.modified_prediction) + " (" +
                     insight_detail::fmt("%+.2f", w.delta * 100) + " points).";
        reply.what_if = std::move(w);
      }
    } else if (t.find("what if") != std::string::npos) {
      reply.intent = "what-if";
      reply.text = "Tell me the change as a number, for example \"what if I walk 2000 more steps?\"";
    } else if (t.find("sleep") != std::string::npos || t.find("predict") != std::string::npos ||
               t.find("tonight") != std::string::npos || t.find("efficiency") != std::string::npos) {
      reply.intent = "prediction";
      reply.text = "Your predicted sleep efficiency is " + insight_detail::fmt("%.2f", reply.prediction) +
                   ". " + advice(s, reply.prediction, text);
    } else {
      reply.intent = "advice";
      reply.text = advice(s, reply.prediction, text);
    }
    reply.suggested_questions = suggested_questions(reply.intent);
    return reply;
  }

  std::vector<FeatureInfo> get_features(const UserSnapshot* s = nullptr) const {
    std::vector<FeatureInfo> out;
    for (const auto& f : artifact_.feature_names) {
      const auto& d = domains_.at(f);
      FeatureInfo info{f, d.category, d.lo, d.hi, d.adjustable, std::nullopt};
      if (s) {
        if (auto it = s->feature_values.find(f); it != s->feature_values.end()) info.current = it->second;
      }
      out.push_back(std::move(info));
    }
    return out;
  }

  // Sessions. Ids are sequential so identical request sequences replay
  // identically.
  std::string create_session(const UserSnapshot& s) {
    validate_snapshot(s);
    std::unique_lock lock(sessions_mu_);
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(++session_counter_));
    sessions_[buf] = s;
    return buf;
  }

  std::string create_session_for(const std::string& participant_id) { return create_session(sample(participant_id)); }

  UserSnapshot session(const std::string& id) const {
    std::shared_lock lock(sessions_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(Errc::kUnknownSession, "unknown session", id);
    return it->second;
  }

  void bind_session(const std::string& id, const UserSnapshot& s) {
    validate_snapshot(s);
    std::unique_lock lock(sessions_mu_);
    if (!sessions_.count(id)) throw Error(Errc::kUnknownSession, "unknown session", id);
    sessions_[id] = s;
  }

  ChatReply chat_turn(const std::string& session_id, const std::string& text) const {
    return chat(session(session_id), text);
  }

 private:
  double raw_predict(const std::map<std::string, double>& x) const {
    return std::clamp(predict(artifact_, x), 0.0, 1.0);
  }

  std::string recommendation_message(const Recommendation& r) const {
    const bool lower = r.suggested_value < r.current_value;
    return std::string(lower ? "Reduce " : "Increase ") + r.feature + " to about " +
           insight_detail::fmt("%.0f", r.suggested_value) + " for " +
           insight_detail::fmt("%+.1f", r.expected_gain * 100) + "% efficiency.";
  }

  std::string advice(const UserSnapshot& s, double prediction, const std::string& question) const {
    if (!generator_) return template_advice(prediction);
    std::string prompt = "Advice request: predicted sleep efficiency " + insight_detail::fmt("%.2f", prediction) +
                         " (" + band(prediction) + ") for participant " + s.participant_id +
                         ". Question: " + question;
    try {
      auto text = generator_->complete(prompt);
      if (text.empty()) return template_advice(prediction);
      return text;
    } catch (const std::exception&) {
      return template_advice(prediction);
    }
  }

  static std::vector<std::string> suggested_questions(const std::string& intent) {
    if (intent == "what-if") {
      return {"How will I sleep tonight?", "What if I spend 60 fewer minutes on my screen?",
              "What should I change to sleep better?"};
    }
    if (intent == "prediction") {
      return {"What if I walk 2000 more steps?", "What if I spend 60 fewer minutes on my screen?",
              "What should I change to sleep better?"};
    }
    return {"How will I sleep tonight?", "What if I walk 2000 more steps?",
            "What if I spend 60 fewer minutes on my screen?"};
  }

  ModelArtifact artifact_;
  ServiceConfig cfg_;
  std::shared_ptr<GeneratorClient> generator_;
  std::map<std::string, FeatureDomain> domains_;
  std::map<std::string, UserSnapshot> samples_;
  mutable std::shared_mutex sessions_mu_;
  std::map<std::string, UserSnapshot> sessions_;
  unsigned long long session_counter_ = 0;
};

}  // namespace somnus
