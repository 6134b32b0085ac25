#include "poleimg/point_cloud.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <string>
#include <string_view>

#include "poleimg/errors.hpp"

namespace poleimg {

namespace {

void append_number(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

std::string_view skip_space(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

template <typename T>
bool parse_token(std::string_view& s, T& value) {
  s = skip_space(s);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), value);
  if (res.ec != std::errc{}) return false;
  const std::string_view rest(res.ptr, static_cast<std::size_t>(s.data() + s.size() - res.ptr));
  if (!rest.empty() && rest.front() != ' ' && rest.front() != '\t' && rest.front() != '\r') {
    return false;
  }
  s = rest;
  return true;
}

bool at_end(std::string_view s) {
  s = skip_space(s);
  return s.empty() || s == "\r";
}

}  // namespace

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  std::string buffer = "PCXYZ 1 " + std::to_string(cloud.session_id) + " " +
                       std::to_string(cloud.points.size()) + "\n";
  for (const Point3& p : cloud.points) {
    append_number(buffer, p.x());
    buffer.push_back(' ');
    append_number(buffer, p.y());
    buffer.push_back(' ');
    append_number(buffer, p.z());
    buffer.push_back('\n');
    if (buffer.size() > (1u << 20)) {
      out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
      buffer.clear();
    }
  }
  out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

PointCloud read_cloud(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing PCXYZ header", 1);
  std::string_view header = skip_space(line);
  if (header.substr(0, 6) != "PCXYZ ") throw ParseError("wrong magic, expected PCXYZ", 1);
  header.remove_prefix(6);
  unsigned version = 0;
  std::uint32_t session = 0;
  std::size_t count = 0;
  if (!parse_token(header, version) || !parse_token(header, session) ||
      !parse_token(header, count) || !at_end(header)) {
    throw ParseError("malformed header", 1);
  }
  if (version != 1) throw ParseError("unsupported version " + std::to_string(version), 1);

  PointCloud cloud;
  cloud.session_id = session;
  cloud.points.reserve(count);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view s = line;
    if (at_end(s) && cloud.points.size() == count) continue;
    double x, y, z;
    if (!parse_token(s, x) || !parse_token(s, y) || !parse_token(s, z) || !at_end(s)) {
      throw ParseError("expected three numbers 'x y z'", line_no);
    }
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
      throw ParseError("non-finite coordinate", line_no);
    }
    if (cloud.points.size() == count) {
      throw ParseError("more points than the declared count " + std::to_string(count), line_no);
    }
    cloud.points.emplace_back(x, y, z);
  }
  if (cloud.points.size() != count) {
    throw ParseError("declared " + std::to_string(count) + " points but found " +
                         std::to_string(cloud.points.size()),
                     line_no);
  }
  return cloud;
}

}  // namespace poleimg
