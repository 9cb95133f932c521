#pragma once

// Persistence of results: CSV tables, the JSON results bundle, and SVG
// trend charts.

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "config.hpp"
#include "eval.hpp"

namespace rx {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kBundleVersion = 1;

// CSV ------------------------------------------------------------------------

inline constexpr const char* kTransferCsvHeader =
    "source_arch,source_eps,source_seed,dest_arch,dest_eps,dest_seed,loss,mode,n,targeted_success,untargeted_error,"
    "baseline_targeted,baseline_error,draws,targeted_success_std,untargeted_error_std";

inline constexpr const char* kRepresentationCsvHeader =
    "source_arch,source_eps,source_seed,dest_arch,dest_eps,dest_seed,pairs,mean_cosine,zero_vectors,per_target_mean";

// Six significant digits.
inline std::string fmt_g6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// RFC 4180 records; both CRLF and LF line ends are accepted.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw FormatError("csv", "unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace detail {

inline auto model_key(const ModelInfo& m) { return std::make_tuple(m.epsilon_l2, m.arch, m.seed); }

inline auto transfer_key(const TransferRecord& r) {
  return std::make_tuple(r.source.epsilon_l2, std::string_view(r.destination.arch), r.destination.epsilon_l2,
                         std::string_view(to_string(r.loss)), std::string_view(to_string(r.mode)),
                         std::string_view(r.source.arch), r.source.seed, r.destination.seed);
}

inline void sort_transfer(std::vector<TransferRecord>& r) {
  std::stable_sort(r.begin(), r.end(),
                   [](const TransferRecord& a, const TransferRecord& b) { return transfer_key(a) < transfer_key(b); });
}

inline void sort_representation(std::vector<RepSimilarityRecord>& r) {
  std::stable_sort(r.begin(), r.end(), [](const RepSimilarityRecord& a, const RepSimilarityRecord& b) {
    return std::make_tuple(a.source.epsilon_l2, a.destination.arch, a.destination.epsilon_l2, a.source.arch,
                           a.source.seed, a.destination.seed) <
           std::make_tuple(b.source.epsilon_l2, b.destination.arch, b.destination.epsilon_l2, b.source.arch,
                           b.source.seed, b.destination.seed);
  });
}

inline std::string model_fields(const ModelInfo& m) {
  return csv_field(m.arch) + "," + fmt_g6(m.epsilon_l2) + "," + std::to_string(m.seed);
}

inline double to_num(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("csv", detail::cat("column ", what, ": '", s, "' is not a number"));
  }
}

inline std::uint64_t to_u64(const std::string& s, const char* what) {
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw FormatError("csv", detail::cat("column ", what, ": '", s, "' is not an integer"));
  }
}

inline std::vector<std::vector<std::string>> csv_body(const std::filesystem::path& p, const char* header,
                                                      std::size_t columns) {
  const auto bytes = read_file(p);
  const auto rows = parse_csv(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  if (rows.empty()) throw FormatError("csv", p.string() + ": missing header");
  std::string h;
  for (std::size_t i = 0; i < rows[0].size(); ++i) h += (i ? "," : "") + rows[0][i];
  if (h != header) throw FormatError("csv", p.string() + ": unexpected header");
  std::vector<std::vector<std::string>> body(rows.begin() + 1, rows.end());
  for (const auto& r : body)
    if (r.size() != columns) throw FormatError("csv", detail::cat(p.string(), ": row with ", r.size(), " fields"));
  return body;
}

}  // namespace detail

inline std::string transfer_csv(std::vector<TransferRecord> records) {
  detail::sort_transfer(records);
  std::string out = std::string(kTransferCsvHeader) + "\r\n";
  for (const auto& r : records) {
    out += detail::model_fields(r.source) + "," + detail::model_fields(r.destination) + "," + to_string(r.loss) + "," +
           to_string(r.mode) + "," + std::to_string(r.n) + "," + fmt_g6(r.targeted_success) + "," +
           fmt_g6(r.untargeted_error) + "," + fmt_g6(r.baseline_targeted) + "," + fmt_g6(r.baseline_error) + "," +
           std::to_string(r.draws) + "," + fmt_g6(r.targeted_success_std) + "," + fmt_g6(r.untargeted_error_std) +
           "\r\n";
  }
  return out;
}

inline std::string representation_csv(std::vector<RepSimilarityRecord> records) {
  detail::sort_representation(records);
  std::string out = std::string(kRepresentationCsvHeader) + "\r\n";
  for (const auto& r : records) {
    std::string per;
    for (std::size_t i = 0; i < r.per_target_mean.size(); ++i) per += (i ? ";" : "") + fmt_g6(r.per_target_mean[i]);
    out += detail::model_fields(r.source) + "," + detail::model_fields(r.destination) + "," + std::to_string(r.pairs) +
           "," + fmt_g6(r.mean_cosine) + "," + std::to_string(r.zero_vectors) + "," + csv_field(per) + "\r\n";
  }
  return out;
}

inline void write_csv(const std::vector<TransferRecord>& records, const std::filesystem::path& path) {
  write_file(path, transfer_csv(records));
}

inline void write_csv(const std::vector<RepSimilarityRecord>& records, const std::filesystem::path& path) {
  write_file(path, representation_csv(records));
}

inline std::vector<TransferRecord> read_transfer_csv(const std::filesystem::path& path) {
  std::vector<TransferRecord> out;
  for (const auto& f : detail::csv_body(path, kTransferCsvHeader, 16)) {
    TransferRecord r;
    r.source = {f[0], detail::to_num(f[1], "source_eps"), detail::to_u64(f[2], "source_seed")};
    r.destination = {f[3], detail::to_num(f[4], "dest_eps"), detail::to_u64(f[5], "dest_seed")};
    r.loss = parse_loss_kind(f[6]);
    r.mode = parse_attack_mode(f[7]);
    r.n = static_cast<std::int64_t>(detail::to_u64(f[8], "n"));
    r.targeted_success = detail::to_num(f[9], "targeted_success");
    r.untargeted_error = detail::to_num(f[10], "untargeted_error");
    r.baseline_targeted = detail::to_num(f[11], "baseline_targeted");
    r.baseline_error = detail::to_num(f[12], "baseline_error");
    r.draws = static_cast<int>(detail::to_u64(f[13], "draws"));
    r.targeted_success_std = detail::to_num(f[14], "targeted_success_std");
    r.untargeted_error_std = detail::to_num(f[15], "untargeted_error_std");
    out.push_back(r);
  }
  return out;
}

inline std::vector<RepSimilarityRecord> read_representation_csv(const std::filesystem::path& path) {
  std::vector<RepSimilarityRecord> out;
  for (const auto& f : detail::csv_body(path, kRepresentationCsvHeader, 10)) {
    RepSimilarityRecord r;
    r.source = {f[0], detail::to_num(f[1], "source_eps"), detail::to_u64(f[2], "source_seed")};
    r.destination = {f[3], detail::to_num(f[4], "dest_eps"), detail::to_u64(f[5], "dest_seed")};
    r.pairs = static_cast<std::int64_t>(detail::to_u64(f[6], "pairs"));
    r.mean_cosine = detail::to_num(f[7], "mean_cosine");
    r.zero_vectors = static_cast<std::int64_t>(detail::to_u64(f[8], "zero_vectors"));
    std::stringstream ss(f[9]);
    for (std::string tok; std::getline(ss, tok, ';');) r.per_target_mean.push_back(detail::to_num(tok, "per_target_mean"));
    out.push_back(r);
  }
  return out;
}

// Destination representation vectors of every representation-attack output,
// one row per pair.
inline std::string representation_vectors_csv(const std::vector<std::tuple<ModelInfo, ModelInfo, std::int64_t, std::int64_t,
                                                                           Tensor<float>>>& rows) {
  std::string out = "source_arch,source_eps,source_seed,dest_arch,dest_eps,dest_seed,target_index,initial_index,vector\r\n";
  for (const auto& [s, d, t, i, v] : rows) {
    std::string vec;
    for (std::int64_t k = 0; k < v.size(); ++k) vec += (k ? ";" : "") + fmt_g6(v[k]);
    out += detail::model_fields(s) + "," + detail::model_fields(d) + "," + std::to_string(t) + "," + std::to_string(i) +
           "," + vec + "\r\n";
  }
  return out;
}

// SVG charts ---------------------------------------------------------------------

struct ChartPoint {
  double eps = 0;
  double value = 0;
};

struct ChartSeries {
  std::string label;
  std::vector<ChartPoint> points;
  std::vector<ChartPoint> baseline;  // drawn dashed when present
};

struct ChartSpec {
  std::string title;
  std::string y_label;
  double y_min = 0;
  double y_max = 1;
};

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

// x axis: source epsilon, with 0 as its own tick left of a log-scaled
// positive range. y axis: [y_min, y_max], values validated and clamped.
inline std::string render_svg_chart(std::vector<ChartSeries> series, const ChartSpec& spec) {
  std::size_t npoints = 0;
  for (const auto& s : series) npoints += s.points.size();
  if (npoints == 0) throw ValidationError("chart: no data points");
  const double tol = 1e-9;
  std::vector<double> pos_eps;
  bool has_zero = false;
  for (auto& s : series)
    for (auto* pts : {&s.points, &s.baseline})
      for (auto& p : *pts) {
        if (!std::isfinite(p.value) || p.value < spec.y_min - tol || p.value > spec.y_max + tol)
          throw ValidationError(detail::cat("chart: value ", p.value, " outside [", spec.y_min, ", ", spec.y_max, "]"));
        if (!(p.eps >= 0)) throw ValidationError("chart: negative epsilon");
        p.value = std::clamp(p.value, spec.y_min, spec.y_max);
        if (p.eps == 0)
          has_zero = true;
        else
          pos_eps.push_back(p.eps);
      }
  std::sort(pos_eps.begin(), pos_eps.end());
  pos_eps.erase(std::unique(pos_eps.begin(), pos_eps.end()), pos_eps.end());

  const double W = 720, H = 440, left = 70, right = 190, top = 50, bottom = 60;
  const double px0 = left, px1 = W - right, py0 = top, py1 = H - bottom;
  const double zero_x = px0 + 25;
  const double log_lo_x = has_zero ? px0 + 80 : px0 + 25, log_hi_x = px1 - 20;
  const double lmin = pos_eps.empty() ? 0 : std::log10(pos_eps.front());
  const double lmax = pos_eps.empty() ? 0 : std::log10(pos_eps.back());
  auto xof = [&](double e) {
    if (e == 0) return zero_x;
    if (lmax == lmin) return (log_lo_x + log_hi_x) / 2;
    return log_lo_x + (std::log10(e) - lmin) / (lmax - lmin) * (log_hi_x - log_lo_x);
  };
  auto yof = [&](double v) { return py1 - (v - spec.y_min) / (spec.y_max - spec.y_min) * (py1 - py0); };
  auto num = [](double v) { return fmt_g6(std::round(v * 100) / 100); };

  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"28\" text-anchor=\"middle\" font-size=\"16\">" << xml_escape(spec.title)
    << "</text>\n";
  // Axes and grid.
  o << "<line x1=\"" << px0 << "\" y1=\"" << py1 << "\" x2=\"" << px1 << "\" y2=\"" << py1 << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << px0 << "\" y1=\"" << py0 << "\" x2=\"" << px0 << "\" y2=\"" << py1 << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double v = spec.y_min + (spec.y_max - spec.y_min) * k / 5.0;
    o << "<line x1=\"" << px0 << "\" y1=\"" << num(yof(v)) << "\" x2=\"" << px1 << "\" y2=\"" << num(yof(v))
      << "\" stroke=\"#dddddd\"/>\n"
      << "<text x=\"" << px0 - 8 << "\" y=\"" << num(yof(v) + 4) << "\" text-anchor=\"end\">" << fmt_g6(v) << "</text>\n";
  }
  std::vector<double> ticks = pos_eps;
  if (has_zero) ticks.insert(ticks.begin(), 0.0);
  for (double e : ticks)
    o << "<line x1=\"" << num(xof(e)) << "\" y1=\"" << py1 << "\" x2=\"" << num(xof(e)) << "\" y2=\"" << py1 + 5
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << num(xof(e)) << "\" y=\"" << py1 + 20 << "\" text-anchor=\"middle\">" << fmt_g6(e) << "</text>\n";
  if (has_zero && !pos_eps.empty()) {
    const double bx = (zero_x + log_lo_x) / 2;
    o << "<text x=\"" << num(bx) << "\" y=\"" << py1 + 4 << "\" text-anchor=\"middle\">//</text>\n";
  }
  o << "<text x=\"" << (px0 + px1) / 2 << "\" y=\"" << H - 18
    << "\" text-anchor=\"middle\">source robustness parameter (l2 epsilon, log scale above 0)</text>\n"
    << "<text x=\"18\" y=\"" << (py0 + py1) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << (py0 + py1) / 2 << ")\">" << xml_escape(spec.y_label) << "</text>\n";

  auto points_attr = [&](std::vector<ChartPoint> pts) {
    std::sort(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.eps < b.eps; });
    std::string s;
    for (const auto& p : pts) s += (s.empty() ? "" : " ") + num(xof(p.eps)) + "," + num(yof(p.value));
    return s;
  };
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* col = palette[i % std::size(palette)];
    if (s.baseline.size() > 1)
      o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\" points=\""
        << points_attr(s.baseline) << "\"/>\n";
    else if (s.baseline.size() == 1)
      o << "<line x1=\"" << px0 << "\" y1=\"" << num(yof(s.baseline[0].value)) << "\" x2=\"" << px1 << "\" y2=\""
        << num(yof(s.baseline[0].value)) << "\" stroke=\"" << col << "\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\"/>\n";
    if (s.points.size() > 1)
      o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"" << points_attr(s.points)
        << "\"/>\n";
    for (const auto& p : s.points)
      o << "<circle cx=\"" << num(xof(p.eps)) << "\" cy=\"" << num(yof(p.value)) << "\" r=\"3.5\" fill=\"" << col
        << "\"/>\n";
    const double ly = py0 + 10 + 22.0 * static_cast<double>(i);
    o << "<line x1=\"" << px1 + 15 << "\" y1=\"" << ly << "\" x2=\"" << px1 + 40 << "\" y2=\"" << ly << "\" stroke=\""
      << col << "\" stroke-width=\"2\"/>\n"
      << "<text x=\"" << px1 + 46 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.label) << "</text>\n";
  }
  const double ly = py0 + 10 + 22.0 * static_cast<double>(series.size());
  if (std::any_of(series.begin(), series.end(), [](const auto& s) { return !s.baseline.empty(); }))
    o << "<line x1=\"" << px1 + 15 << "\" y1=\"" << ly << "\" x2=\"" << px1 + 40 << "\" y2=\"" << ly
      << "\" stroke=\"gray\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\"/>\n"
      << "<text x=\"" << px1 + 46 << "\" y=\"" << ly + 4 << "\">baseline (unperturbed)</text>\n";
  o << "</svg>\n";
  return o.str();
}

enum class TransferMetric { targeted_success, untargeted_error };

inline const char* to_string(TransferMetric m) {
  return m == TransferMetric::targeted_success ? "targeted_success" : "untargeted_error";
}

inline std::string dest_label(const ModelInfo& d) { return d.arch + " (eps " + fmt_g6(d.epsilon_l2) + ")"; }

// One series per destination; replicates at the same source epsilon are averaged.
inline std::vector<ChartSeries> transfer_series(const std::vector<TransferRecord>& records, TransferMetric metric) {
  std::map<std::string, std::map<double, std::array<double, 3>>> acc;  // value sum, baseline sum, count
  for (const auto& r : records) {
    auto& a = acc[dest_label(r.destination)][r.source.epsilon_l2];
    a[0] += metric == TransferMetric::targeted_success ? r.targeted_success : r.untargeted_error;
    a[1] += metric == TransferMetric::targeted_success ? r.baseline_targeted : r.baseline_error;
    a[2] += 1;
  }
  std::vector<ChartSeries> out;
  for (const auto& [label, by_eps] : acc) {
    ChartSeries s;
    s.label = label;
    for (const auto& [eps, a] : by_eps) {
      s.points.push_back({eps, a[0] / a[2]});
      s.baseline.push_back({eps, a[1] / a[2]});
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_svg_chart(const std::vector<TransferRecord>& records, TransferMetric metric, const std::string& title,
                            const std::filesystem::path& path) {
  if (records.empty()) throw ValidationError("chart: no records");
  write_file(path, render_svg_chart(transfer_series(records, metric),
                                    {title, metric == TransferMetric::targeted_success ? "targeted success rate"
                                                                                       : "untargeted error rate",
                                     0, 1}));
}

inline void write_svg_chart(const std::vector<RepSimilarityRecord>& records, const std::string& title,
                            const std::filesystem::path& path) {
  if (records.empty()) throw ValidationError("chart: no records");
  std::map<std::string, std::map<double, std::pair<double, int>>> acc;
  double lo = 0;
  for (const auto& r : records) {
    auto& a = acc[dest_label(r.destination)][r.source.epsilon_l2];
    a.first += r.mean_cosine;
    a.second += 1;
    lo = std::min(lo, r.mean_cosine);
  }
  std::vector<ChartSeries> series;
  for (const auto& [label, by] : acc) {
    ChartSeries s;
    s.label = label;
    for (const auto& [eps, a] : by) s.points.push_back({eps, a.first / a.second});
    series.push_back(std::move(s));
  }
  write_file(path, render_svg_chart(series, {title, "mean cosine similarity", lo < 0 ? -1.0 : 0.0, 1}));
}

// Results bundle --------------------------------------------------------------------

struct ResultsBundle {
  nlohmann::json config;
  std::map<std::string, std::string> inputs;  // artifact name -> sha256
  std::vector<TransferRecord> transfer;
  std::vector<RepSimilarityRecord> representation;
  nlohmann::json metadata = nlohmann::json::object();  // wall-clock fields, excluded from the digest
};

inline nlohmann::json bundle_content(const ResultsBundle& b) {
  auto t = b.transfer;
  auto r = b.representation;
  detail::sort_transfer(t);
  detail::sort_representation(r);
  return {{"format", "robustxfer-results"}, {"version", kBundleVersion}, {"tool_version", kToolVersion},
          {"config", b.config},            {"inputs", b.inputs},        {"transfer", t},
          {"representation", r}};
}

inline std::string bundle_digest(const ResultsBundle& b) { return sha256_hex(bundle_content(b).dump()); }

inline std::string encode_bundle(const ResultsBundle& b) {
  nlohmann::json j = bundle_content(b);
  j["bundle_digest"] = bundle_digest(b);
  j["metadata"] = b.metadata;
  return j.dump(2) + "\n";
}

inline void write_bundle(const ResultsBundle& b, const std::filesystem::path& path) { write_file(path, encode_bundle(b)); }

inline ResultsBundle read_bundle(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError("results bundle not found: " + path.string());
  const auto bytes = read_file(path);
  try {
    const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
    if (j.value("format", "") != "robustxfer-results") throw FormatError("bad-magic", "not a results bundle");
    if (j.at("version").get<int>() != kBundleVersion)
      throw FormatError("unsupported-version", detail::cat("bundle version ", j.at("version").get<int>(), " unsupported"));
    ResultsBundle b;
    b.config = j.at("config");
    b.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    b.transfer = j.at("transfer").get<std::vector<TransferRecord>>();
    b.representation = j.at("representation").get<std::vector<RepSimilarityRecord>>();
    if (j.contains("metadata")) b.metadata = j.at("metadata");
    if (j.contains("bundle_digest") && j.at("bundle_digest").get<std::string>() != bundle_digest(b))
      throw FormatError("checksum", "results bundle digest mismatch");
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt", std::string("results bundle: ") + e.what());
  }
}

// Writes CSVs and charts for a bundle into `dir`; no model access needed.
inline std::vector<std::filesystem::path> write_report(const ResultsBundle& b, const std::filesystem::path& results_dir,
                                                       const std::filesystem::path& charts_dir) {
  std::filesystem::create_directories(results_dir);
  std::filesystem::create_directories(charts_dir);
  std::vector<std::filesystem::path> out;
  write_csv(b.transfer, results_dir / "transfer.csv");
  write_csv(b.representation, results_dir / "representation.csv");
  out.push_back(results_dir / "transfer.csv");
  out.push_back(results_dir / "representation.csv");
  const std::string name = b.config.is_object() ? b.config.value("name", std::string("robustxfer")) : "robustxfer";
  std::map<std::pair<LossKind, AttackMode>, std::vector<TransferRecord>> groups;
  for (const auto& r : b.transfer) groups[{r.loss, r.mode}].push_back(r);
  for (const auto& [key, recs] : groups) {
    const auto metric = key.second == AttackMode::targeted ? TransferMetric::targeted_success : TransferMetric::untargeted_error;
    const auto p = charts_dir / detail::cat(to_string(metric), "_", to_string(key.first), "_", to_string(key.second), ".svg");
    write_svg_chart(recs, metric,
                    detail::cat(name, ": ", key.second == AttackMode::targeted ? "targeted transfer success" : "untargeted transfer error",
                                " (", to_string(key.first), " loss)"),
                    p);
    out.push_back(p);
  }
  if (!b.representation.empty()) {
    const auto p = charts_dir / "representation_cosine.svg";
    write_svg_chart(b.representation, name + ": representation cosine similarity", p);
    out.push_back(p);
  }
  return out;
}

}  // namespace rx
