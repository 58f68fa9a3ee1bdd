#include "softdsgd/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

namespace softdsgd::io {

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  if (res.ec != std::errc()) throw IoError("could not format number");
  return std::string(buf, res.ptr);
}

json matrix_to_json(const MatrixXd& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  json out = {{"n", m.rows()}};
  if (m.cols() != m.rows()) out["d"] = m.cols();
  out["data"] = std::move(rows);
  return out;
}

MatrixXd matrix_from_json(const json& j) {
  if (!j.is_object() || !j.contains("n") || !j.contains("data") || !j["data"].is_array()) {
    throw IoError("matrix JSON needs fields \"n\" and \"data\"");
  }
  const auto n = j["n"].get<Index>();
  const auto& data = j["data"];
  if (static_cast<Index>(data.size()) != n || n < 1) throw IoError("matrix JSON: row count differs from n");
  const auto cols = j.contains("d") ? j["d"].get<Index>() : static_cast<Index>(data[0].size());
  MatrixXd m(n, cols);
  for (Index i = 0; i < n; ++i) {
    const auto& row = data[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) throw IoError("matrix JSON: ragged rows");
    for (Index k = 0; k < cols; ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

json layout_to_json(const DeviceLayout& layout) { return matrix_to_json(layout.positions()); }

DeviceLayout layout_from_json(const json& j) {
  const MatrixXd m = matrix_from_json(j);
  if (m.cols() != 2) throw IoError("layout JSON needs two coordinates per device");
  return DeviceLayout(DeviceLayout::Positions(m));
}

std::string matrix_to_csv(const MatrixXd& m) {
  std::string out;
  for (Index j = 0; j < m.cols(); ++j) {
    out += (j ? ",c" : "c") + std::to_string(j);
  }
  out += '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

MatrixXd matrix_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<double>> rows;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line[0] == 'c') continue;  // header
    }
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const std::size_t end = std::min(line.find(',', pos), line.size());
      double v = 0.0;
      const auto res = std::from_chars(line.data() + pos, line.data() + end, v);
      if (res.ec != std::errc() || res.ptr != line.data() + end) {
        throw IoError("malformed CSV number: '" + line.substr(pos, end - pos) + "'");
      }
      row.push_back(v);
      pos = end + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) throw IoError("CSV rows have different lengths");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError("CSV holds no rows");
  MatrixXd m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

std::string metrics_to_csv(const training::MetricsTrace& trace) {
  std::string out = "iter,epoch,comm_rounds_cum,loss_mean_model,grad_norm_sq,dispersion\n";
  for (const auto& r : trace) {
    out += std::to_string(r.iter) + ',' + format_double(r.epoch) + ',' +
           std::to_string(r.comm_rounds_cum) + ',' + format_double(r.loss_mean_model) + ',' +
           format_double(r.grad_norm_sq) + ',' + format_double(r.dispersion) + '\n';
  }
  return out;
}

std::string cdf_to_csv(const std::vector<topology::CdfPoint>& cdf) {
  std::string out = "probability,cumulative_fraction\n";
  for (const auto& pt : cdf) {
    out += format_double(pt.probability) + ',' + format_double(pt.cumulative_fraction) + '\n';
  }
  return out;
}

std::string optimizer_log_to_csv(const std::vector<mixing::OptimizerLogEntry>& log) {
  std::string out = "iter,objective,step_size,projection_residual\n";
  for (const auto& e : log) {
    out += std::to_string(e.iter) + ',' + format_double(e.objective) + ',' +
           format_double(e.step_size) + ',' + format_double(e.projection_residual) + '\n';
  }
  return out;
}

std::string mask_stats_to_csv(const std::vector<transport::LinkDelivery>& stats) {
  std::string out = "src,dst,delivered_fraction\n";
  for (const auto& s : stats) {
    out += std::to_string(s.src) + ',' + std::to_string(s.dst) + ',' +
           format_double(s.delivered_fraction) + '\n';
  }
  return out;
}

json checks_to_json(const std::vector<analysis::VerificationCheck>& checks) {
  json out = json::array();
  for (const auto& c : checks) {
    out.push_back({{"name", c.name},
                   {"pass", c.pass},
                   {"observed", c.observed},
                   {"threshold", c.threshold},
                   {"details", c.details},
                   {"asserted", c.asserted}});
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string());
}

}  // namespace softdsgd::io
