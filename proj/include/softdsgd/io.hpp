#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "softdsgd/analysis.hpp"
#include "softdsgd/mixing.hpp"
#include "softdsgd/topology.hpp"
#include "softdsgd/training.hpp"
#include "softdsgd/transport.hpp"
#include "softdsgd/types.hpp"

// File formats. Matrices are JSON objects {"n": rows, "data": [[row], ...]}
// or CSV with a header line and one line per row. Doubles are written in the
// shortest form that parses back to the same value.
namespace softdsgd::io {

using json = nlohmann::json;

std::string format_double(double value);

json matrix_to_json(const MatrixXd& m);
MatrixXd matrix_from_json(const json& j);

json layout_to_json(const DeviceLayout& layout);
DeviceLayout layout_from_json(const json& j);

std::string matrix_to_csv(const MatrixXd& m);
MatrixXd matrix_from_csv(const std::string& text);

std::string metrics_to_csv(const training::MetricsTrace& trace);
std::string cdf_to_csv(const std::vector<topology::CdfPoint>& cdf);
std::string optimizer_log_to_csv(const std::vector<mixing::OptimizerLogEntry>& log);
std::string mask_stats_to_csv(const std::vector<transport::LinkDelivery>& stats);
json checks_to_json(const std::vector<analysis::VerificationCheck>& checks);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace softdsgd::io
