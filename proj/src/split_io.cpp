#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "cicr/datagen.hpp"
#include "cicr/numerics/checkpoint.hpp"

namespace cicr::data {

namespace {

constexpr const char* kSplitMagic = "CICR-SPLIT 1";

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  std::istringstream next(const char* expected_tag) {
    std::string line;
    if (!std::getline(in_, line)) fail(std::string("unexpected end of file, expected '") + expected_tag + "'");
    ++lineno_;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag != expected_tag) fail(std::string("expected '") + expected_tag + "', found '" + tag + "'");
    return ls;
  }

  template <typename T>
  T field(std::istringstream& ls, const char* what) {
    T value{};
    if (!(ls >> value)) fail(std::string("bad or missing ") + what);
    return value;
  }

  // %.17g text parsed with strtod round-trips exactly.
  double real(std::istringstream& ls, const char* what) {
    const auto text = field<std::string>(ls, what);
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size()) fail(std::string("bad ") + what + " '" + text + "'");
    return v;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw SplitParseError("split file line " + std::to_string(lineno_) + ": " + msg);
  }

  int lineno() const { return lineno_; }

 private:
  std::istream& in_;
  int lineno_ = 0;
};

}  // namespace

void serialize_split(const DatasetSplit& split, const std::filesystem::path& path) {
  std::ostringstream text;
  text << kSplitMagic << "\n";
  text << "name " << split.name << "\n";
  text << "videos " << split.samples.size() << "\n";
  std::vector<num::NamedTensor> payload;
  for (const auto& v : split.samples) {
    text << "video " << v.id << " " << v.events.size() << " " << v.annotations.size() << "\n";
    for (const auto& e : v.events)
      text << "event " << e.svo.subject << " " << e.svo.action << " " << e.svo.object << " " << e.ordinal << " "
           << fmt_double(e.span.start) << " " << fmt_double(e.span.end) << "\n";
    for (const auto& a : v.annotations) {
      text << "annotation " << a.gt_moments.size();
      for (const auto& g : a.gt_moments) text << " " << fmt_double(g.start) << " " << fmt_double(g.end);
      text << " " << a.query << "\n";
    }
    payload.push_back({v.id + ".features", v.clip_features});
  }
  std::ostringstream bin;
  num::write_entries(bin, payload);
  const std::string bytes = bin.str();
  text << "payload " << bytes.size() << "\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SplitParseError("cannot open " + path.string() + " for writing");
  const std::string head = text.str();
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw SplitParseError("write failed for " + path.string());
}

DatasetSplit load_split(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SplitParseError("cannot open " + path.string());
  LineReader r(in);

  {
    auto ms = r.next("CICR-SPLIT");
    if (r.field<int>(ms, "format version") != 1) r.fail("unsupported split format version");
  }
  DatasetSplit split;
  {
    auto ls = r.next("name");
    split.name = r.field<std::string>(ls, "split name");
  }
  std::size_t n_videos = 0;
  {
    auto ls = r.next("videos");
    n_videos = r.field<std::size_t>(ls, "video count");
  }
  for (std::size_t i = 0; i < n_videos; ++i) {
    VideoSample v;
    auto ls = r.next("video");
    v.id = r.field<std::string>(ls, "video id");
    const auto n_events = r.field<std::size_t>(ls, "event count");
    const auto n_ann = r.field<std::size_t>(ls, "annotation count");
    for (std::size_t e = 0; e < n_events; ++e) {
      auto es = r.next("event");
      SyntheticEvent ev;
      ev.svo.subject = r.field<std::string>(es, "subject");
      ev.svo.action = r.field<std::string>(es, "action");
      ev.svo.object = r.field<std::string>(es, "object");
      ev.ordinal = r.field<int>(es, "ordinal");
      ev.span.start = r.real(es, "start");
      ev.span.end = r.real(es, "end");
      if (!ev.span.valid()) r.fail("invalid event span");
      v.events.push_back(ev);
    }
    for (std::size_t a = 0; a < n_ann; ++a) {
      auto as = r.next("annotation");
      Annotation ann;
      const auto n_gt = r.field<std::size_t>(as, "moment count");
      if (n_gt == 0) r.fail("annotation without ground-truth moments");
      for (std::size_t g = 0; g < n_gt; ++g) {
        Span s;
        s.start = r.real(as, "moment start");
        s.end = r.real(as, "moment end");
        if (!s.valid()) r.fail("invalid moment span");
        ann.gt_moments.push_back(s);
      }
      std::getline(as >> std::ws, ann.query);
      if (ann.query.empty()) r.fail("annotation without query text");
      v.annotations.push_back(std::move(ann));
    }
    split.samples.push_back(std::move(v));
  }

  auto ps = r.next("payload");
  const auto n_bytes = r.field<std::uint64_t>(ps, "payload size");
  const auto origin = static_cast<std::uint64_t>(in.tellg());
  std::vector<num::NamedTensor> entries;
  try {
    entries = num::read_entries(in, origin);
  } catch (const num::CheckpointError& e) {
    throw SplitParseError(path.string() + ": " + e.what());
  }
  if (static_cast<std::uint64_t>(in.tellg()) - origin != n_bytes)
    throw SplitParseError(path.string() + ": payload size does not match header");
  if (in.peek() != std::char_traits<char>::eof()) throw SplitParseError(path.string() + ": trailing bytes after payload");

  std::map<std::string, num::Tensor> by_name;
  for (auto& e : entries) by_name.emplace(e.name, e.value);
  for (auto& v : split.samples) {
    auto it = by_name.find(v.id + ".features");
    if (it == by_name.end()) throw SplitParseError(path.string() + ": no features for video " + v.id);
    if (it->second.rank() != 2) throw SplitParseError(path.string() + ": features for " + v.id + " are not a matrix");
    v.clip_features = it->second;
  }
  return split;
}

}  // namespace cicr::data
