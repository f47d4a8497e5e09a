#include "xpl/reporting.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "xpl/text_io.hpp"

namespace xpl {

std::string history_csv(const MetricsHistory& h) {
  std::ostringstream os;
  os << kHistoryCsvHeader << '\n';
  for (const auto& r : h.records) {
    os << r.epoch << ',' << format_csv(r.ciou_a) << ',' << format_csv(r.auc_a) << ',' << format_csv(r.ciou_b) << ','
       << format_csv(r.auc_b) << ',' << format_csv(r.loss.cross) << ',' << format_csv(r.loss.sup) << ','
       << format_csv(r.loss.unsup) << ',' << format_csv(r.loss.total) << ',' << r.n_selected << ','
       << format_csv(r.mean_rho) << '\n';
  }
  return os.str();
}

std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::ostringstream os;
  os << kEvalCsvHeader << '\n';
  for (const auto& r : rows) {
    os << r.split << ',' << r.model << ',' << format_csv(r.report.ciou) << ',' << format_csv(r.report.auc) << ','
       << r.report.n_samples << ',' << r.report.empty_warnings << '\n';
  }
  return os.str();
}

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::vector<Series>& series) {
  constexpr double kW = 640, kH = 400, kLeft = 50, kRight = 150, kTop = 30, kBottom = 40;
  const double plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
  std::size_t n = 0;
  for (const auto& s : series) n = std::max(n, s.values.size());
  const double x_span = n > 1 ? static_cast<double>(n - 1) : 1.0;

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  os << "<text x=\"" << kLeft << "\" y=\"20\" font-size=\"14\">" << escape_xml(title) << "</text>\n";
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << plot_w << "\" height=\"" << plot_h
     << "\" fill=\"none\" stroke=\"#000\"/>\n";
  for (int tick = 0; tick <= 100; tick += 25) {
    const double y = kTop + plot_h * (1.0 - tick / 100.0);
    os << "<text x=\"" << kLeft - 30 << "\" y=\"" << y + 4 << "\" font-size=\"10\">" << tick << "</text>\n";
  }
  os << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kH - 10 << "\" font-size=\"12\">epoch</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      const double v = std::clamp(s.values[i], 0.0, 100.0);
      const double x = kLeft + plot_w * static_cast<double>(i) / x_span;
      const double y = kTop + plot_h * (1.0 - v / 100.0);
      os << (i ? " " : "") << format_csv(x) << ',' << format_csv(y);
    }
    os << "\"/>\n";
    const double ly = kTop + 15.0 * static_cast<double>(k + 1);
    os << "<text x=\"" << kLeft + plot_w + 10 << "\" y=\"" << ly << "\" font-size=\"11\" fill=\"" << color << "\">"
       << escape_xml(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string format_kv(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    }
    kv[std::string(trim(t.substr(0, eq)))] = std::string(trim(t.substr(eq + 1)));
  }
  return kv;
}

}  // namespace xpl
