#include "splitwire/report.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "splitwire/error.hpp"

namespace splitwire {

using nlohmann::json;

const ReportRow* Report::final_row(const std::string& party) const {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it)
    if (it->party == party) return &*it;
  return nullptr;
}

namespace {

std::string num(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : ""; }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s, std::size_t line) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    fail(ErrorKind::Parse, "report line " + std::to_string(line) + ": '" + s + "' is not a number");
  return v;
}

std::uint64_t to_u64(const std::string& s, std::size_t line) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    fail(ErrorKind::Parse, "report line " + std::to_string(line) + ": '" + s + "' is not an integer");
  return v;
}

}  // namespace

std::string csv_header() {
  return "epoch,party,mode,cut,clients,acc,loss,fwd_bytes,bwd_bytes,label_bytes,peak_mem_bytes,t_fwd_ms,t_bwd_ms,"
         "t_comm_ms";
}

std::string to_csv(const Report& r) {
  std::string out = csv_header() + "\n";
  for (const auto& row : r.rows) {
    out += std::to_string(row.epoch) + "," + row.party + "," + row.mode + "," + std::to_string(row.cut) + "," +
           std::to_string(row.clients) + "," + opt(row.acc) + "," + opt(row.loss) + "," +
           std::to_string(row.fwd_bytes) + "," + std::to_string(row.bwd_bytes) + "," +
           std::to_string(row.label_bytes) + "," + std::to_string(row.peak_mem_bytes) + "," + num(row.t_fwd_ms) +
           "," + num(row.t_bwd_ms) + "," + num(row.t_comm_ms) + "\n";
  }
  return out;
}

Report report_from_csv(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  require(static_cast<bool>(std::getline(ss, line)), ErrorKind::Parse, "empty report");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == csv_header(), ErrorKind::Parse, "unexpected report header '" + line + "'");
  Report r;
  std::size_t lineno = 1;
  while (std::getline(ss, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c = split_csv(line);
    require(c.size() == 14, ErrorKind::Parse,
            "report line " + std::to_string(lineno) + " has " + std::to_string(c.size()) + " columns, expected 14");
    ReportRow row;
    row.epoch = to_u64(c[0], lineno);
    row.party = c[1];
    row.mode = c[2];
    row.cut = to_u64(c[3], lineno);
    row.clients = to_u64(c[4], lineno);
    if (!c[5].empty()) row.acc = to_double(c[5], lineno);
    if (!c[6].empty()) row.loss = to_double(c[6], lineno);
    row.fwd_bytes = to_u64(c[7], lineno);
    row.bwd_bytes = to_u64(c[8], lineno);
    row.label_bytes = to_u64(c[9], lineno);
    row.peak_mem_bytes = to_u64(c[10], lineno);
    row.t_fwd_ms = to_double(c[11], lineno);
    row.t_bwd_ms = to_double(c[12], lineno);
    row.t_comm_ms = to_double(c[13], lineno);
    r.rows.push_back(std::move(row));
  }
  return r;
}

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}
json opt_u64(const std::optional<std::uint64_t>& v) { return v ? json(*v) : json(nullptr); }
std::optional<std::uint64_t> opt_u64_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<std::uint64_t>();
}

json counters_json(const TrafficCounters& c) {
  return {{"frames", c.frames},
          {"frame_bytes", c.frame_bytes},
          {"tensor_payload_bytes", c.tensor_payload_bytes},
          {"label_bytes", c.label_bytes}};
}

TrafficCounters counters_from(const json& j) {
  TrafficCounters c;
  c.frames = j.at("frames").get<std::uint64_t>();
  c.frame_bytes = j.at("frame_bytes").get<std::uint64_t>();
  c.tensor_payload_bytes = j.at("tensor_payload_bytes").get<std::uint64_t>();
  c.label_bytes = j.at("label_bytes").get<std::uint64_t>();
  return c;
}

json comm_json(const CommSnapshot& s) {
  json sent = json::object();
  json recv = json::object();
  for (std::size_t v = 0; v < kFrameVariantCount; ++v) {
    const char* name = to_string(static_cast<FrameVariant>(v));
    sent[name] = counters_json(s.sent[v]);
    recv[name] = counters_json(s.received[v]);
  }
  return {{"sent", sent}, {"received", recv}};
}

CommSnapshot comm_from(const json& j) {
  CommSnapshot s;
  for (std::size_t v = 0; v < kFrameVariantCount; ++v) {
    const char* name = to_string(static_cast<FrameVariant>(v));
    s.sent[v] = counters_from(j.at("sent").at(name));
    s.received[v] = counters_from(j.at("received").at(name));
  }
  return s;
}

}  // namespace

std::string to_json(const Report& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"epoch", row.epoch},
                    {"party", row.party},
                    {"mode", row.mode},
                    {"cut", row.cut},
                    {"clients", row.clients},
                    {"acc", opt_json(row.acc)},
                    {"loss", opt_json(row.loss)},
                    {"fwd_bytes", row.fwd_bytes},
                    {"bwd_bytes", row.bwd_bytes},
                    {"label_bytes", row.label_bytes},
                    {"peak_mem_bytes", row.peak_mem_bytes},
                    {"t_fwd_ms", row.t_fwd_ms},
                    {"t_bwd_ms", row.t_bwd_ms},
                    {"t_comm_ms", row.t_comm_ms},
                    {"aux_acc", opt_json(row.aux_acc)},
                    {"train_acc", opt_json(row.train_acc)},
                    {"fwd_frame_bytes", row.fwd_frame_bytes},
                    {"bwd_frame_bytes", row.bwd_frame_bytes},
                    {"control_bytes", row.control_bytes},
                    {"handoff_bytes", row.handoff_bytes},
                    {"eval_bytes", row.eval_bytes}});
  }
  json j = {{"schema_version", r.schema_version},
            {"role", r.role},
            {"config", r.config},
            {"config_hash", r.config_hash},
            {"complete", r.complete},
            {"error", r.error},
            {"rows", rows},
            {"comm", comm_json(r.comm)},
            {"relay", comm_json(r.relay)},
            {"client_digest", opt_u64(r.client_digest)},
            {"aux_digest", opt_u64(r.aux_digest)},
            {"server_digest", opt_u64(r.server_digest)}};
  return j.dump(2) + "\n";
}

Report report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw OffsetError(ErrorKind::Parse, std::string("report is not valid JSON: ") + e.what(), e.byte);
  }
  try {
    Report r;
    r.schema_version = j.at("schema_version").get<int>();
    require(r.schema_version == kReportSchemaVersion, ErrorKind::Parse,
            "unsupported report schema_version " + std::to_string(r.schema_version));
    r.role = j.at("role").get<std::string>();
    r.config = j.at("config").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::uint64_t>();
    r.complete = j.at("complete").get<bool>();
    r.error = j.at("error").get<std::string>();
    for (const auto& jr : j.at("rows")) {
      ReportRow row;
      row.epoch = jr.at("epoch").get<std::uint64_t>();
      row.party = jr.at("party").get<std::string>();
      row.mode = jr.at("mode").get<std::string>();
      row.cut = jr.at("cut").get<std::size_t>();
      row.clients = jr.at("clients").get<std::size_t>();
      row.acc = opt_from(jr.at("acc"));
      row.loss = opt_from(jr.at("loss"));
      row.fwd_bytes = jr.at("fwd_bytes").get<std::uint64_t>();
      row.bwd_bytes = jr.at("bwd_bytes").get<std::uint64_t>();
      row.label_bytes = jr.at("label_bytes").get<std::uint64_t>();
      row.peak_mem_bytes = jr.at("peak_mem_bytes").get<std::uint64_t>();
      row.t_fwd_ms = jr.at("t_fwd_ms").get<double>();
      row.t_bwd_ms = jr.at("t_bwd_ms").get<double>();
      row.t_comm_ms = jr.at("t_comm_ms").get<double>();
      row.aux_acc = opt_from(jr.at("aux_acc"));
      row.train_acc = opt_from(jr.at("train_acc"));
      row.fwd_frame_bytes = jr.at("fwd_frame_bytes").get<std::uint64_t>();
      row.bwd_frame_bytes = jr.at("bwd_frame_bytes").get<std::uint64_t>();
      row.control_bytes = jr.at("control_bytes").get<std::uint64_t>();
      row.handoff_bytes = jr.at("handoff_bytes").get<std::uint64_t>();
      row.eval_bytes = jr.at("eval_bytes").get<std::uint64_t>();
      r.rows.push_back(std::move(row));
    }
    r.comm = comm_from(j.at("comm"));
    r.relay = comm_from(j.at("relay"));
    r.client_digest = opt_u64_from(j.at("client_digest"));
    r.aux_digest = opt_u64_from(j.at("aux_digest"));
    r.server_digest = opt_u64_from(j.at("server_digest"));
    return r;
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("malformed report: ") + e.what());
  }
}

void write_report(const Report& r, const std::string& path, const std::string& format) {
  std::string text;
  if (format == "csv") text = to_csv(r);
  else if (format == "json") text = to_json(r);
  else fail(ErrorKind::Config, "unknown report format '" + format + "'");
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write report '" + path + "'");
  out << text;
  if (!out) fail(ErrorKind::Io, "short write to '" + path + "'");
}

Report read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open report '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") return report_from_csv(ss.str());
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") return report_from_json(ss.str());
  fail(ErrorKind::Config, "report '" + path + "' must end in .csv or .json");
}

namespace {

struct Totals {
  std::string mode;
  std::size_t cut = 0;
  std::size_t clients = 0;
  std::optional<double> acc;
  std::uint64_t tensor_bytes = 0;
  std::uint64_t fwd = 0;
  std::uint64_t bwd = 0;
  std::uint64_t peak = 0;
  double time_ms = 0.0;
};

Totals totals_of(const Report& r) {
  Totals t;
  for (const auto& row : r.rows) {
    if (row.party != "client") continue;
    t.mode = row.mode;
    t.cut = row.cut;
    t.clients = row.clients;
    t.acc = row.acc;
    t.fwd += row.fwd_bytes;
    t.bwd += row.bwd_bytes;
    t.peak = std::max(t.peak, row.peak_mem_bytes);
    t.time_ms += row.t_fwd_ms + row.t_bwd_ms + row.t_comm_ms;
  }
  t.tensor_bytes = t.fwd + t.bwd;
  return t;
}

std::string ratio(double ref, double row) {
  if (row == 0.0) return ref == 0.0 ? "1.00" : "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", ref / row);
  return buf;
}

}  // namespace

namespace {

// The "data.*" lines of a canonical config; empty when the report carries no config (CSV).
std::string dataset_lines(const std::string& config) {
  std::istringstream in(config);
  std::string line, out;
  while (std::getline(in, line))
    if (line.rfind("data.", 0) == 0) out += line + "\n";
  return out;
}

}  // namespace

std::string compare_table(const std::vector<std::string>& names, const std::vector<Report>& reports) {
  require(reports.size() >= 2, ErrorKind::Config, "need >=2 configs to compare");
  require(names.size() == reports.size(), ErrorKind::Contract, "one name per report");
  std::optional<std::pair<std::string, std::string>> dataset;  // name, lines
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const std::string d = dataset_lines(reports[i].config);
    if (d.empty()) continue;
    if (!dataset) dataset.emplace(names[i], d);
    require(dataset->second == d, ErrorKind::Config,
            "incompatible dataset specs: " + dataset->first + " and " + names[i] + " were trained on different data");
  }
  std::vector<Totals> t;
  for (const auto& r : reports) {
    t.push_back(totals_of(r));
    require(!t.back().mode.empty(), ErrorKind::Config, "report has no client rows");
  }
  std::string out =
      "name,mode,cut,clients,final_acc,fwd_bytes,bwd_bytes,tensor_bytes,client_peak_bytes,client_time_ms,"
      "comm_ratio,peak_mem_ratio,time_ratio\n";
  char buf[64];
  for (std::size_t i = 0; i < t.size(); ++i) {
    const Totals& x = t[i];
    std::string acc = "";
    if (x.acc) {
      std::snprintf(buf, sizeof buf, "%.4f", *x.acc);
      acc = buf;
    }
    std::snprintf(buf, sizeof buf, "%.3f", x.time_ms);
    out += names[i] + "," + x.mode + "," + std::to_string(x.cut) + "," + std::to_string(x.clients) + "," + acc +
           "," + std::to_string(x.fwd) + "," + std::to_string(x.bwd) + "," + std::to_string(x.tensor_bytes) + "," +
           std::to_string(x.peak) + "," + buf + "," +
           ratio(static_cast<double>(t[0].tensor_bytes), static_cast<double>(x.tensor_bytes)) + "," +
           ratio(static_cast<double>(t[0].peak), static_cast<double>(x.peak)) + "," + ratio(t[0].time_ms, x.time_ms) +
           "\n";
  }
  return out;
}

std::string describe(const Report& r) {
  std::ostringstream os;
  os << "report: role=" << (r.role.empty() ? "?" : r.role) << " schema=" << r.schema_version
     << " complete=" << (r.complete ? "yes" : "no");
  if (r.config_hash != 0) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(r.config_hash));
    os << " config_hash=" << buf;
  }
  os << "\n";
  if (!r.error.empty()) os << "error: " << r.error << "\n";
  std::uint64_t epochs = 0;
  for (const auto& row : r.rows) epochs = std::max(epochs, row.epoch);
  os << "epochs: " << epochs << ", rows: " << r.rows.size() << "\n";
  for (const char* party : {"client", "server"}) {
    const ReportRow* row = r.final_row(party);
    if (row == nullptr) continue;
    std::uint64_t fwd = 0, bwd = 0, labels = 0, peak = 0;
    for (const auto& x : r.rows)
      if (x.party == party) {
        fwd += x.fwd_bytes;
        bwd += x.bwd_bytes;
        labels += x.label_bytes;
        peak = std::max(peak, x.peak_mem_bytes);
      }
    os << party << ": mode=" << row->mode << " cut=" << row->cut << " clients=" << row->clients;
    if (row->acc) os << " final_acc=" << *row->acc;
    if (row->loss) os << " final_loss=" << *row->loss;
    os << " fwd_bytes=" << fwd << " bwd_bytes=" << bwd << " label_bytes=" << labels << " peak_mem_bytes=" << peak
       << "\n";
  }
  return os.str();
}

}  // namespace splitwire
