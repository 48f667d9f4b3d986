#ifndef FKEE_CHECKPOINT_HPP
#define FKEE_CHECKPOINT_HPP

#include <iosfwd>
#include <string>

#include "fkee/mlp.hpp"

namespace fkee {

// Self-describing text checkpoints. Every file starts with the version tag
// "fkee-ckpt-v1"; loading anything else is refused. Parameters are printed
// with 17 significant digits so doubles round-trip bit-exactly.
inline constexpr const char* kCheckpointTag = "fkee-ckpt-v1";

void write_ckpt_header(std::ostream& os);
void expect_ckpt_header(std::istream& is, const std::string& path);

void write_mlp_section(std::ostream& os, const std::string& name, const MLP& net);
MLP read_mlp_section(std::istream& is, const std::string& name, const std::string& path);

void write_vec_section(std::ostream& os, const std::string& name, const Vec& v);
Vec read_vec_section(std::istream& is, const std::string& name, const std::string& path);

void save_mlp(const std::string& path, const MLP& net);
MLP load_mlp(const std::string& path);

std::string format_g17(double v);

}  // namespace fkee

#endif
