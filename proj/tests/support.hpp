#pragma once

#include <string>
#include <string_view>

#include "impsym/certificate.hpp"
#include "impsym/kvfile.hpp"
#include "impsym/system.hpp"

namespace test {

inline std::string data_path(std::string_view file) {
  return std::string(IMPSYM_DATA_DIR) + "/" + std::string(file);
}

inline impsym::NetworkSpec demo_spec() {
  return impsym::load_network_file(data_path("demo/demo.sys"));
}

inline std::vector<impsym::Certificate> demo_certs(const impsym::NetworkSpec& spec) {
  return impsym::load_certificates_file(data_path("demo/demo.cert"), spec);
}

inline impsym::NetworkSpec spec_from(std::string_view text) {
  return impsym::load_network(impsym::KvDocument::parse(text, "<test>"));
}

// One scalar subsystem with m = q = 1 and the given flow and jump maps.
inline std::string scalar_system(const std::string& f, const std::string& g, double tau = 0.1,
                                 int z_min = 1, int z_max = 2, const std::string& M = "0") {
  return "[subsystem s]\nn = 1\nq = 1\nm = 1\nstate_lower = 0\nstate_upper = 1\n"
         "internal_lower = 0\ninternal_upper = 1\nexternal_lower = 0\nexternal_upper = 0.5\n"
         "f1 = " + f + "\ng1 = " + g + "\ntau = " + std::to_string(tau) +
         "\nz_min = " + std::to_string(z_min) + "\nz_max = " + std::to_string(z_max) +
         "\n[network]\nM = " + M + "\n";
}

}  // namespace test
