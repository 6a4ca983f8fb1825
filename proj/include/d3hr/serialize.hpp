#pragma once

// JSON documents for worlds, datasets, schedules, distilled sets and stats
// bundles; CSV tables for reports. Floats in reports carry 9 significant
// digits.

#include <filesystem>
#include <span>
#include <string>

#include <json.hpp>

#include "d3hr/ddim.hpp"
#include "d3hr/distill.hpp"
#include "d3hr/eval.hpp"
#include "d3hr/gmm_world.hpp"

namespace d3hr {

using Json = nlohmann::ordered_json;

Json to_json(const GmmSpec& spec);
GmmSpec gmm_spec_from_json(const Json& j);

Json to_json(const Dataset& data);
/// Also accepts distilled-set documents (a superset of the dataset schema).
Dataset dataset_from_json(const Json& j);

/// alpha_bar is never stored; loading recomputes it from the betas.
Json to_json(const NoiseSchedule& schedule);
NoiseSchedule schedule_from_json(const Json& j);

Json to_json(const DistilledSet& set);

Json to_json(const StatsBundle& bundle);
StatsBundle stats_bundle_from_json(const Json& j);

Json to_json(const EvalReport& report);
Json to_json(std::span<const SweepRow> rows);
Json to_json(std::span<const AblationRow> rows);

std::string eval_report_csv(std::span<const EvalReport> reports);
std::string sweep_csv(std::span<const SweepRow> rows);
std::string ablation_csv(std::span<const AblationRow> rows);

/// "%.9g"
std::string format_sig9(double v);
/// v rounded to 9 significant digits.
double round_sig9(double v);

std::string read_text_file(const std::filesystem::path& path);
/// Throws ValidationError on malformed JSON, IoError when unreadable.
Json read_json_file(const std::filesystem::path& path);
/// Writes via a sibling temp file and rename; IoError on failure.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace d3hr
