#include "kongnet/io.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace kongnet::io {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field.push_back(ch);
    }
  }
  fields.push_back(field);
  return fields;
}

double parse_double(const std::string& text, std::size_t line_no) {
  double v = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) {
    throw IoError("csv line " + std::to_string(line_no) + ": bad number '" + text + "'");
  }
  return v;
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw IoError("format_number failed");
  return std::string(buf, ptr);
}

std::vector<PointRecord> read_points_csv(std::istream& in) {
  std::vector<PointRecord> out;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  bool with_confidence = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (!header_seen) {
      header_seen = true;
      if (fields.size() >= 4 && fields[0] == "id" && fields[1] == "x" && fields[2] == "y" &&
          fields[3] == "class_name") {
        with_confidence = fields.size() == 5 && fields[4] == "confidence";
        if (fields.size() > 5 || (fields.size() == 5 && !with_confidence)) {
          throw IoError("csv header: unexpected columns");
        }
        continue;
      }
      throw IoError("csv: missing header 'id,x,y,class_name[,confidence]'");
    }
    const std::size_t expected = with_confidence ? 5 : 4;
    if (fields.size() != expected) {
      throw IoError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(expected) + " fields");
    }
    PointRecord r;
    r.id = fields[0];
    r.x = parse_double(fields[1], line_no);
    r.y = parse_double(fields[2], line_no);
    r.class_name = fields[3];
    if (with_confidence) {
      r.confidence = parse_double(fields[4], line_no);
      if (!(*r.confidence >= 0.0 && *r.confidence <= 1.0)) {
        throw IoError("csv line " + std::to_string(line_no) + ": confidence outside [0,1]");
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<PointRecord> read_points_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_points_csv(in);
}

void write_points_csv(std::ostream& out, std::span<const PointRecord> records) {
  bool with_confidence = !records.empty();
  for (const auto& r : records) with_confidence = with_confidence && r.confidence.has_value();
  out << (with_confidence ? "id,x,y,class_name,confidence\n" : "id,x,y,class_name\n");
  for (const auto& r : records) {
    out << r.id << ',' << format_number(r.x) << ',' << format_number(r.y) << ',' << r.class_name;
    if (with_confidence) out << ',' << format_number(*r.confidence);
    out << '\n';
  }
}

void write_points_csv(const std::filesystem::path& path, std::span<const PointRecord> records) {
  auto out = open_out(path, std::ios::out | std::ios::binary);
  write_points_csv(out, records);
}

std::vector<PointRecord> to_records(std::span<const Detection> detections, const ClassSpec& classes,
                                    const std::string& image_id) {
  std::vector<PointRecord> out;
  out.reserve(detections.size());
  for (const auto& d : detections) {
    if (d.class_index < 0 || static_cast<std::size_t>(d.class_index) >= classes.size()) {
      throw IoError("detection class index out of range");
    }
    out.push_back({image_id, d.x, d.y, classes.names[static_cast<std::size_t>(d.class_index)], d.confidence});
  }
  return out;
}

std::map<std::string, std::vector<Detection>> group_detections(std::span<const PointRecord> records,
                                                               const ClassSpec& classes) {
  std::map<std::string, std::vector<Detection>> out;
  for (const auto& r : records) {
    const int k = classes.index_of(r.class_name);
    if (k < 0) throw IoError("unknown class name '" + r.class_name + "'");
    out[r.id].push_back({r.x, r.y, k, r.confidence.value_or(1.0)});
  }
  return out;
}

// ---- npy ----

NpyArray read_npy(const std::filesystem::path& path) {
  auto in = open_in(path, std::ios::in | std::ios::binary);
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0) throw IoError(path.string() + ": not an npy file");
  unsigned char version[2];
  in.read(reinterpret_cast<char*>(version), 2);
  std::size_t header_len = 0;
  if (version[0] == 1) {
    unsigned char len[2];
    in.read(reinterpret_cast<char*>(len), 2);
    header_len = static_cast<std::size_t>(len[0]) | (static_cast<std::size_t>(len[1]) << 8);
  } else if (version[0] == 2 || version[0] == 3) {
    unsigned char len[4];
    in.read(reinterpret_cast<char*>(len), 4);
    header_len = static_cast<std::size_t>(len[0]) | (static_cast<std::size_t>(len[1]) << 8) |
                 (static_cast<std::size_t>(len[2]) << 16) | (static_cast<std::size_t>(len[3]) << 24);
  } else {
    throw IoError(path.string() + ": unsupported npy version");
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw IoError(path.string() + ": truncated header");

  NpyArray arr;
  auto descr_pos = header.find("'descr'");
  if (descr_pos == std::string::npos) throw IoError(path.string() + ": header lacks descr");
  auto q1 = header.find('\'', header.find(':', descr_pos) + 1);
  auto q2 = header.find('\'', q1 + 1);
  arr.descr = header.substr(q1 + 1, q2 - q1 - 1);
  if (header.find("'fortran_order': True") != std::string::npos) {
    throw IoError(path.string() + ": fortran order not supported");
  }
  auto shape_pos = header.find("'shape'");
  auto p1 = header.find('(', shape_pos);
  auto p2 = header.find(')', p1);
  std::string shape_text = header.substr(p1 + 1, p2 - p1 - 1);
  std::stringstream ss(shape_text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto first = item.find_first_not_of(' ');
    if (first == std::string::npos) continue;
    arr.shape.push_back(static_cast<std::size_t>(std::stoull(item.substr(first))));
  }

  std::size_t item_size = 0;
  if (arr.descr == "|u1" || arr.descr == "<u1" || arr.descr == "|b1") {
    item_size = 1;
    arr.descr = "|u1";
  } else if (arr.descr == "<i4") {
    item_size = 4;
  } else if (arr.descr == "<f8") {
    item_size = 8;
  } else {
    throw IoError(path.string() + ": unsupported dtype " + arr.descr);
  }
  std::size_t count = 1;
  for (auto d : arr.shape) count *= d;
  arr.bytes.resize(count * item_size);
  in.read(arr.bytes.data(), static_cast<std::streamsize>(arr.bytes.size()));
  if (!in) throw IoError(path.string() + ": truncated data");
  return arr;
}

void write_npy(const std::filesystem::path& path, const NpyArray& array) {
  std::string shape = "(";
  for (std::size_t i = 0; i < array.shape.size(); ++i) {
    shape += std::to_string(array.shape[i]);
    if (array.shape.size() == 1 || i + 1 < array.shape.size()) shape += ", ";
  }
  if (array.shape.size() == 1) shape.pop_back();
  shape += ")";
  std::string header = "{'descr': '" + array.descr + "', 'fortran_order': False, 'shape': " + shape + ", }";
  const std::size_t preamble = 10;
  const std::size_t total = preamble + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');

  auto out = open_out(path, std::ios::out | std::ios::binary);
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(array.bytes.data(), static_cast<std::streamsize>(array.bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

template <typename T>
NpyArray pack(const std::string& descr, std::vector<std::size_t> shape, const std::vector<T>& values) {
  NpyArray arr{descr, std::move(shape), {}};
  arr.bytes.resize(values.size() * sizeof(T));
  std::memcpy(arr.bytes.data(), values.data(), arr.bytes.size());
  return arr;
}

template <typename T>
std::vector<T> unpack(const NpyArray& arr) {
  std::vector<T> values(arr.bytes.size() / sizeof(T));
  std::memcpy(values.data(), arr.bytes.data(), values.size() * sizeof(T));
  return values;
}

template <typename T>
Grid<T> load_grid(const std::filesystem::path& path, const std::string& descr) {
  auto arr = read_npy(path);
  if (arr.descr != descr || arr.shape.size() != 2) {
    throw IoError(path.string() + ": expected 2D " + descr + " array");
  }
  Grid<T> grid(static_cast<int>(arr.shape[0]), static_cast<int>(arr.shape[1]));
  grid.values() = unpack<T>(arr);
  return grid;
}

template <typename T>
void save_grid(const std::filesystem::path& path, const Grid<T>& grid, const std::string& descr) {
  write_npy(path, pack(descr, {static_cast<std::size_t>(grid.height()), static_cast<std::size_t>(grid.width())},
                       grid.values()));
}

}  // namespace

void save_mask(const std::filesystem::path& path, const Mask& mask) { save_grid(path, mask, "|u1"); }
Mask load_mask(const std::filesystem::path& path) { return load_grid<std::uint8_t>(path, "|u1"); }
void save_labels(const std::filesystem::path& path, const LabelMap& labels) { save_grid(path, labels, "<i4"); }
LabelMap load_labels(const std::filesystem::path& path) { return load_grid<std::int32_t>(path, "<i4"); }
void save_prob_map(const std::filesystem::path& path, const ProbMap& map) { save_grid(path, map, "<f8"); }

void save_image(const std::filesystem::path& path, const ImagePatch& patch) {
  write_npy(path, pack("<f8",
                       {static_cast<std::size_t>(patch.height()), static_cast<std::size_t>(patch.width()), 3},
                       patch.pixels()));
}

ImagePatch load_image(const std::filesystem::path& path, double mpp, std::string id) {
  auto arr = read_npy(path);
  if (arr.shape.size() != 3 || arr.shape[2] != 3) throw IoError(path.string() + ": expected (H, W, 3) image");
  std::vector<double> pixels;
  if (arr.descr == "<f8") {
    pixels = unpack<double>(arr);
  } else if (arr.descr == "|u1") {
    auto raw = unpack<std::uint8_t>(arr);
    pixels.assign(raw.begin(), raw.end());
  } else {
    throw IoError(path.string() + ": image must be uint8 or float64");
  }
  return ImagePatch(static_cast<int>(arr.shape[0]), static_cast<int>(arr.shape[1]), std::move(pixels), mpp,
                    std::move(id));
}

void save_annotation(const std::filesystem::path& stem, const std::string& patch_id,
                     const AnnotationSet& annotation, const ClassSpec& classes) {
  std::vector<PointRecord> records;
  for (const auto& c : annotation.centroids) {
    if (c.class_index < 0 || static_cast<std::size_t>(c.class_index) >= classes.size()) {
      throw IoError("annotation class index out of range");
    }
    records.push_back({patch_id, c.x, c.y, classes.names[static_cast<std::size_t>(c.class_index)], std::nullopt});
  }
  write_points_csv(std::filesystem::path(stem.string() + ".csv"), records);
  if (annotation.instance_mask) {
    save_labels(stem.string() + ".mask.npy", *annotation.instance_mask);
    std::vector<std::int32_t> cls(annotation.instance_classes.begin(), annotation.instance_classes.end());
    write_npy(stem.string() + ".classes.npy", pack("<i4", {cls.size()}, cls));
  }
}

AnnotationSet load_annotation(const std::filesystem::path& stem, const ClassSpec& classes) {
  AnnotationSet a;
  for (const auto& r : read_points_csv(std::filesystem::path(stem.string() + ".csv"))) {
    const int k = classes.index_of(r.class_name);
    if (k < 0) throw IoError("unknown class name '" + r.class_name + "'");
    a.centroids.push_back({r.x, r.y, k});
  }
  const std::filesystem::path mask_path = stem.string() + ".mask.npy";
  if (std::filesystem::exists(mask_path)) {
    a.instance_mask = load_labels(mask_path);
    auto arr = read_npy(stem.string() + ".classes.npy");
    if (arr.descr != "<i4" || arr.shape.size() != 1) throw IoError("instance classes must be 1D int32");
    auto cls = unpack<std::int32_t>(arr);
    a.instance_classes.assign(cls.begin(), cls.end());
  }
  return a;
}

std::vector<ManifestRow> save_target_set(const std::filesystem::path& dir, const std::string& patch_id,
                                         const TargetMaskSet& targets, const ClassSpec& classes) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestRow> rows;
  auto emit = [&](const std::string& cls, const std::string& task, const Mask& m) {
    const std::string name = patch_id + "." + cls + "." + task + ".npy";
    save_mask(dir / name, m);
    rows.push_back({patch_id, cls, task, name});
  };
  for (std::size_t k = 0; k < targets.classes.size(); ++k) {
    const std::string cls = k < classes.size() ? classes.names[k] : "overall";
    const auto& t = targets.classes[k];
    emit(cls, "centroid", t.centroid);
    if (t.nucleus) emit(cls, "nucleus", *t.nucleus);
    if (t.contour) emit(cls, "contour", *t.contour);
  }
  return rows;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestRow> rows) {
  auto out = open_out(path, std::ios::out | std::ios::binary);
  out << "patch_id,class_name,task,path\n";
  for (const auto& r : rows) out << r.patch_id << ',' << r.class_name << ',' << r.task << ',' << r.path << '\n';
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<ManifestRow> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (first) {
      first = false;
      if (f.size() != 4 || f[0] != "patch_id") throw IoError("manifest: bad header");
      continue;
    }
    if (f.size() != 4) throw IoError("manifest: expected 4 fields");
    rows.push_back({f[0], f[1], f[2], f[3]});
  }
  return rows;
}

}  // namespace kongnet::io
