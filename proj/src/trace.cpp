#include "smartshards/trace.hpp"

#include <array>
#include <charconv>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace smartshards {

namespace {

constexpr std::array<const char*, 28> kKindNames = {
    "send",        "deliver",    "drop",       "submit",     "propose",
    "decide",      "append",     "reject",     "view",       "violation",
    "confirm",     "resend",     "join_request", "join_assign", "join_exec",
    "join_adopt",  "join_active", "leave_request", "leave_exec", "leave_done",
    "sms_members", "sms_reply",  "reseat",     "create",     "destroy",
    "evict",       "multi",      "roundstat"};

}  // namespace

const char* event_kind_name(EventKind k) {
  auto i = static_cast<size_t>(k);
  return i < kKindNames.size() ? kKindNames[i] : "unknown";
}

bool event_kind_from_name(const std::string& name, EventKind& out) {
  for (size_t i = 0; i < kKindNames.size(); ++i) {
    if (name == kKindNames[i]) {
      out = static_cast<EventKind>(i);
      return true;
    }
  }
  return false;
}

std::string format_event(const TraceEvent& e) {
  char buf[160];
  int n = std::snprintf(buf, sizeof(buf),
                        "%d,%s,%d,%016llx,%lld,%lld,%lld,%lld", e.round,
                        event_kind_name(e.kind), e.actor,
                        static_cast<unsigned long long>(e.digest),
                        static_cast<long long>(e.f0),
                        static_cast<long long>(e.f1),
                        static_cast<long long>(e.f2),
                        static_cast<long long>(e.f3));
  std::string line(buf, static_cast<size_t>(n));
  if (!e.note.empty()) {
    line += ',';
    line += e.note;
  }
  return line;
}

bool parse_event(const std::string& line, TraceEvent& out) {
  // round,kind,actor,digest,f0,f1,f2,f3[,note]
  std::array<std::string, 8> cols;
  size_t pos = 0;
  for (int i = 0; i < 8; ++i) {
    size_t comma = line.find(',', pos);
    if (comma == std::string::npos) {
      if (i < 7) return false;
      cols[static_cast<size_t>(i)] = line.substr(pos);
      pos = line.size();
    } else {
      cols[static_cast<size_t>(i)] = line.substr(pos, comma - pos);
      pos = comma + 1;
    }
  }
  TraceEvent e;
  auto to_i64 = [](const std::string& s, int64_t& v) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return ec == std::errc() && p == s.data() + s.size();
  };
  int64_t tmp = 0;
  if (!to_i64(cols[0], tmp)) return false;
  e.round = static_cast<int32_t>(tmp);
  if (!event_kind_from_name(cols[1], e.kind)) return false;
  if (!to_i64(cols[2], tmp)) return false;
  e.actor = static_cast<int32_t>(tmp);
  {
    uint64_t d = 0;
    const std::string& s = cols[3];
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), d, 16);
    if (ec != std::errc() || p != s.data() + s.size()) return false;
    e.digest = d;
  }
  if (!to_i64(cols[4], e.f0)) return false;
  if (!to_i64(cols[5], e.f1)) return false;
  if (!to_i64(cols[6], e.f2)) return false;
  if (!to_i64(cols[7], e.f3)) return false;
  if (pos < line.size()) e.note = line.substr(pos);
  out = e;
  return true;
}

void TraceRecorder::header(const std::string& key, const std::string& value) {
  headers_.emplace_back(key, value);
}

void TraceRecorder::event(const TraceEvent& e) { events_.push_back(e); }

void TraceRecorder::write(std::ostream& os) const {
  for (const auto& [k, v] : headers_) {
    os << "# " << k << '=' << v << '\n';
  }
  for (const auto& e : events_) {
    os << format_event(e) << '\n';
  }
}

std::string TraceRecorder::to_text() const {
  std::ostringstream os;
  write(os);
  return os.str();
}

TraceRecorder TraceRecorder::parse(std::istream& is) {
  TraceRecorder rec;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      size_t start = line.find_first_not_of(" \t", 1);
      if (start == std::string::npos) continue;
      size_t eq = line.find('=', start);
      if (eq == std::string::npos) {
        throw std::runtime_error("trace header without '=' at line " +
                                 std::to_string(lineno));
      }
      rec.headers_.emplace_back(line.substr(start, eq - start),
                                line.substr(eq + 1));
      continue;
    }
    TraceEvent e;
    if (!parse_event(line, e)) {
      throw std::runtime_error("malformed trace record at line " +
                               std::to_string(lineno));
    }
    rec.events_.push_back(e);
  }
  return rec;
}

}  // namespace smartshards
