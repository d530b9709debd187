#pragma once

// Plain-text fixture files holding named complex matrices.
//
//   reduction-fixture 1
//   dim <d>
//   matrix <name>
//   real
//   <d rows of d numbers>
//   imag
//   <d rows of d numbers>
//   matrix <name>
//   ...
//
// Lines starting with '#' are comments. Numbers are written with 17
// significant digits, which round-trips every double bit for bit. A density
// matrix is stored under the name "rho"; projector families as consecutive
// matrices named "projector".

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "reduction/errors.hpp"
#include "reduction/quantum.hpp"

namespace reduction {

struct NamedMatrix {
  std::string name;
  ComplexMatrix value;
};

struct Fixture {
  int dim = 0;
  std::vector<NamedMatrix> matrices;

  std::optional<DensityMatrix> density() const {
    for (const auto& m : matrices)
      if (m.name == "rho") return DensityMatrix(m.value);
    return std::nullopt;
  }

  std::optional<ProjectorFamily> family() const {
    std::vector<ComplexMatrix> ps;
    for (const auto& m : matrices)
      if (m.name == "projector") ps.push_back(m.value);
    if (ps.empty()) return std::nullopt;
    return ProjectorFamily(std::move(ps));
  }
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_fixture(std::ostream& os, const Fixture& fx) {
  os << "reduction-fixture 1\n";
  os << "dim " << fx.dim << "\n";
  for (const auto& m : fx.matrices) {
    if (m.value.rows() != fx.dim || m.value.cols() != fx.dim) {
      throw FormatError("matrix '" + m.name + "' does not match the fixture dimension");
    }
    os << "matrix " << m.name << "\n";
    for (int part = 0; part < 2; ++part) {
      os << (part == 0 ? "real" : "imag") << "\n";
      for (int r = 0; r < fx.dim; ++r) {
        for (int c = 0; c < fx.dim; ++c) {
          const auto z = m.value(r, c);
          os << (c ? " " : "") << format_double(part == 0 ? z.real() : z.imag());
        }
        os << "\n";
      }
    }
  }
}

namespace detail {

class FixtureReader {
 public:
  explicit FixtureReader(std::istream& is) : is_(is) {}

  bool next(std::string& line) {
    while (std::getline(is_, line)) {
      ++line_no_;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto last = line.find_last_not_of(" \t\r");
      line = line.substr(first, last - first + 1);
      return true;
    }
    return false;
  }

  std::string expect_line(const char* what) {
    std::string line;
    if (!next(line)) fail(std::string("unexpected end of file, expected ") + what);
    return line;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError("fixture line " + std::to_string(line_no_) + ": " + msg);
  }

  std::vector<double> numbers(const std::string& line, int count) const {
    std::vector<double> out;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      if (p == end) break;
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) fail("malformed number");
      out.push_back(v);
      p = ptr;
    }
    if (static_cast<int>(out.size()) != count) {
      fail("expected " + std::to_string(count) + " numbers, found " + std::to_string(out.size()));
    }
    return out;
  }

 private:
  std::istream& is_;
  int line_no_ = 0;
};

}  // namespace detail

inline Fixture read_fixture(std::istream& is) {
  detail::FixtureReader rd(is);
  Fixture fx;
  if (rd.expect_line("header") != "reduction-fixture 1") rd.fail("bad header");
  {
    const std::string line = rd.expect_line("dim");
    std::istringstream ss(line);
    std::string key;
    ss >> key >> fx.dim;
    if (key != "dim" || !ss || fx.dim < 1 || fx.dim > kMaxHilbertDimension) {
      rd.fail("expected 'dim <1..256>'");
    }
  }
  std::string line;
  while (rd.next(line)) {
    if (line.rfind("matrix ", 0) != 0) rd.fail("expected 'matrix <name>'");
    NamedMatrix m{line.substr(7), ComplexMatrix::Zero(fx.dim, fx.dim)};
    for (int part = 0; part < 2; ++part) {
      if (rd.expect_line("part tag") != (part == 0 ? "real" : "imag")) {
        rd.fail(part == 0 ? "expected 'real'" : "expected 'imag'");
      }
      for (int r = 0; r < fx.dim; ++r) {
        const auto row = rd.numbers(rd.expect_line("matrix row"), fx.dim);
        for (int c = 0; c < fx.dim; ++c) {
          if (part == 0) m.value(r, c).real(row[c]);
          else m.value(r, c).imag(row[c]);
        }
      }
    }
    fx.matrices.push_back(std::move(m));
  }
  return fx;
}

inline Fixture load_fixture(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open fixture file " + path);
  return read_fixture(in);
}

inline void save_fixture(const std::string& path, const Fixture& fx) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write fixture file " + path);
  write_fixture(out, fx);
}

inline Fixture make_fixture(const DensityMatrix& rho, const ProjectorFamily& family) {
  Fixture fx{rho.dim(), {{"rho", rho.matrix()}}};
  for (const auto& p : family.projectors()) fx.matrices.push_back({"projector", p});
  return fx;
}

}  // namespace reduction
