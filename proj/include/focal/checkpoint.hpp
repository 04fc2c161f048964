// Versioned binary serialization for networks and optimizer state.
// Little-endian, raw IEEE-754 bit patterns: save/load round-trips are
// bit-exact by construction.
#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "focal/adam.hpp"
#include "focal/nn.hpp"

namespace focal {
namespace bin {

inline void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated stream");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void write_f64(std::ostream& out, double v) { write_u64(out, std::bit_cast<std::uint64_t>(v)); }
inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

inline void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint: truncated stream");
  return s;
}

inline void write_f64_array(std::ostream& out, const std::vector<double>& v) {
  write_u64(out, v.size());
  for (double x : v) write_f64(out, x);
}

inline std::vector<double> read_f64_array(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  std::vector<double> v(n);
  for (double& x : v) x = read_f64(in);
  return v;
}

inline void write_u64_array(std::ostream& out, const std::vector<std::size_t>& v) {
  write_u64(out, v.size());
  for (std::size_t x : v) write_u64(out, x);
}

inline std::vector<std::size_t> read_u64_array(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  std::vector<std::size_t> v(n);
  for (std::size_t& x : v) x = static_cast<std::size_t>(read_u64(in));
  return v;
}

}  // namespace bin

inline void save_mlp(std::ostream& out, const Mlp& net) {
  const MlpSpec& spec = net.spec();
  bin::write_u64(out, spec.input_dim);
  bin::write_u64_array(out, spec.hidden_dims);
  bin::write_u64(out, spec.output_dim);
  bin::write_u64(out, static_cast<std::uint64_t>(spec.activation));
  bin::write_f64(out, spec.dropout_rate);
  bin::write_u64(out, spec.activate_output ? 1 : 0);
  bin::write_f64_array(out, net.params());
}

inline Mlp load_mlp(std::istream& in) {
  MlpSpec spec;
  spec.input_dim = static_cast<std::size_t>(bin::read_u64(in));
  spec.hidden_dims = bin::read_u64_array(in);
  spec.output_dim = static_cast<std::size_t>(bin::read_u64(in));
  spec.activation = static_cast<Activation>(bin::read_u64(in));
  spec.dropout_rate = bin::read_f64(in);
  spec.activate_output = bin::read_u64(in) != 0;
  Rng scratch(0);
  Mlp net(spec, scratch);
  std::vector<double> params = bin::read_f64_array(in);
  if (params.size() != net.param_count())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  net.params() = std::move(params);
  return net;
}

inline void save_adam(std::ostream& out, const AdamState& state) {
  bin::write_f64(out, state.learning_rate);
  bin::write_f64(out, state.weight_decay);
  bin::write_f64(out, state.beta1);
  bin::write_f64(out, state.beta2);
  bin::write_f64(out, state.epsilon);
  bin::write_u64(out, state.step);
  bin::write_f64_array(out, state.m);
  bin::write_f64_array(out, state.v);
}

inline AdamState load_adam(std::istream& in) {
  AdamState state;
  state.learning_rate = bin::read_f64(in);
  state.weight_decay = bin::read_f64(in);
  state.beta1 = bin::read_f64(in);
  state.beta2 = bin::read_f64(in);
  state.epsilon = bin::read_f64(in);
  state.step = bin::read_u64(in);
  state.m = bin::read_f64_array(in);
  state.v = bin::read_f64_array(in);
  return state;
}

}  // namespace focal
