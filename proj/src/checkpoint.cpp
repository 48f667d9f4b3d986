#include "fkee/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace fkee {

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_ckpt_header(std::ostream& os) { os << kCheckpointTag << "\n"; }

void expect_ckpt_header(std::istream& is, const std::string& path) {
  std::string tag;
  if (!(is >> tag) || tag != kCheckpointTag)
    throw ConfigError("checkpoint version mismatch in " + path + ": expected " +
                      std::string(kCheckpointTag));
}

void write_mlp_section(std::ostream& os, const std::string& name, const MLP& net) {
  const MLPSpec& s = net.spec();
  os << "mlp " << name << " " << s.input_dim << " " << s.output_dim << " "
     << s.hidden.size();
  for (int w : s.hidden) os << " " << w;
  os << "\nparams " << net.params().size() << "\n";
  for (Eigen::Index i = 0; i < net.params().size(); ++i)
    os << format_g17(net.params()[i]) << "\n";
}

MLP read_mlp_section(std::istream& is, const std::string& name,
                     const std::string& path) {
  std::string kw, nm;
  MLPSpec s;
  std::size_t nh = 0;
  if (!(is >> kw >> nm >> s.input_dim >> s.output_dim >> nh) || kw != "mlp" ||
      nm != name)
    throw ConfigError("checkpoint " + path + ": expected mlp section '" + name + "'");
  s.hidden.resize(nh);
  for (auto& w : s.hidden)
    if (!(is >> w)) throw ConfigError("checkpoint " + path + ": truncated spec");
  Eigen::Index n = 0;
  if (!(is >> kw >> n) || kw != "params")
    throw ConfigError("checkpoint " + path + ": expected params count");
  if (std::size_t(n) != param_count(s))
    throw ConfigError("checkpoint " + path + ": params count disagrees with spec");
  Vec p(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(is >> p[i])) throw ConfigError("checkpoint " + path + ": truncated params");
  return MLP(std::move(s), std::move(p));
}

void write_vec_section(std::ostream& os, const std::string& name, const Vec& v) {
  os << "vec " << name << " " << v.size() << "\n";
  for (Eigen::Index i = 0; i < v.size(); ++i) os << format_g17(v[i]) << "\n";
}

Vec read_vec_section(std::istream& is, const std::string& name,
                     const std::string& path) {
  std::string kw, nm;
  Eigen::Index n = 0;
  if (!(is >> kw >> nm >> n) || kw != "vec" || nm != name)
    throw ConfigError("checkpoint " + path + ": expected vec section '" + name + "'");
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(is >> v[i])) throw ConfigError("checkpoint " + path + ": truncated vec");
  return v;
}

void save_mlp(const std::string& path, const MLP& net) {
  std::ofstream os(path);
  require(bool(os), "cannot open " + path + " for writing");
  write_ckpt_header(os);
  write_mlp_section(os, "net", net);
}

MLP load_mlp(const std::string& path) {
  std::ifstream is(path);
  require(bool(is), "cannot open " + path);
  expect_ckpt_header(is, path);
  return read_mlp_section(is, "net", path);
}

}  // namespace fkee
