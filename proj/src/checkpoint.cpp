#include "poleimg/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "binary_io.hpp"

namespace poleimg {

namespace detail {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace detail

namespace {

constexpr const char* kMagic = "PICK";

void put_tensor(std::string& out, const std::string& name, const std::vector<std::uint32_t>& dims,
                const Matrix<double>& value) {
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
  for (std::uint32_t d : dims) detail::put_le<std::uint32_t>(out, d);
  for (Eigen::Index r = 0; r < value.rows(); ++r) {
    for (Eigen::Index c = 0; c < value.cols(); ++c) detail::put_le<double>(out, value(r, c));
  }
}

Tensor<double> get_tensor(detail::ByteReader& in) {
  const auto name_len = in.get<std::uint32_t>("tensor name length");
  std::string name = in.bytes(name_len, "tensor name");
  const auto rank = in.get<std::uint32_t>("tensor rank");
  if (rank == 0 || rank > 8) throw FormatError("tensor " + name + " has invalid rank");
  std::vector<std::uint32_t> dims(rank);
  std::uint64_t count = 1;
  for (auto& d : dims) {
    d = in.get<std::uint32_t>("tensor dims");
    count *= d;
  }
  in.need(count * sizeof(double), "tensor values");
  Tensor<double> t = make_tensor<double>(std::move(name), std::move(dims));
  for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
    for (Eigen::Index c = 0; c < t.value.cols(); ++c) t.value(r, c) = in.get<double>("tensor values");
  }
  return t;
}

}  // namespace

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::string out(kMagic);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.shape.emb_dim));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.shape.rows));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.shape.cols));

  std::size_t n = checkpoint.params.size();
  if (checkpoint.optimizer) n += 2 + 2 * checkpoint.params.size();
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(n));
  for (const auto& t : checkpoint.params.tensors) put_tensor(out, t.name, t.dims, t.value);
  if (const auto& opt = checkpoint.optimizer) {
    if (opt->first_moment.size() != checkpoint.params.size()) {
      throw ContractError("optimizer state does not match checkpoint parameters");
    }
    Matrix<double> hp(4, 1);
    hp << opt->lr, opt->beta1, opt->beta2, opt->epsilon;
    put_tensor(out, "adam.hparams", {4}, hp);
    put_tensor(out, "adam.step", {1}, Matrix<double>::Constant(1, 1, static_cast<double>(opt->step)));
    for (std::size_t i = 0; i < checkpoint.params.size(); ++i) {
      const auto& t = checkpoint.params[i];
      put_tensor(out, "adam.m/" + t.name, t.dims, opt->first_moment[i]);
      put_tensor(out, "adam.v/" + t.name, t.dims, opt->second_moment[i]);
    }
  }
  detail::write_file(path.string(), out);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const std::string data = detail::read_file(path.string());
  detail::ByteReader in(data, path.string());
  if (in.bytes(4, "magic") != kMagic) throw FormatError(path.string() + ": wrong magic, expected PICK");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint cp;
  cp.shape.emb_dim = static_cast<int>(in.get<std::uint32_t>("emb_dim"));
  cp.shape.rows = static_cast<int>(in.get<std::uint32_t>("input_rows"));
  cp.shape.cols = static_cast<int>(in.get<std::uint32_t>("input_cols"));
  const auto n = in.get<std::uint32_t>("tensor count");

  std::vector<Tensor<double>> optimizer_tensors;
  for (std::uint32_t i = 0; i < n; ++i) {
    Tensor<double> t = get_tensor(in);
    if (t.name.rfind("adam.", 0) == 0) {
      optimizer_tensors.push_back(std::move(t));
    } else {
      cp.params.tensors.push_back(std::move(t));
    }
  }
  if (in.remaining() != 0) {
    throw FormatError(path.string() + ": " + std::to_string(in.remaining()) + " trailing bytes");
  }
  const auto* fc = cp.params.find("fc.weight");
  if (!fc || fc->value.rows() != cp.shape.emb_dim) {
    throw FormatError(path.string() + ": emb_dim header does not match fc.weight");
  }

  if (!optimizer_tensors.empty()) {
    AdamState<double> opt;
    auto take = [&](const std::string& name) -> const Tensor<double>& {
      for (const auto& t : optimizer_tensors) {
        if (t.name == name) return t;
      }
      throw FormatError(path.string() + ": missing optimizer tensor " + name);
    };
    const auto& hp = take("adam.hparams").value;
    if (hp.size() != 4) throw FormatError(path.string() + ": malformed adam.hparams");
    opt.lr = hp(0);
    opt.beta1 = hp(1);
    opt.beta2 = hp(2);
    opt.epsilon = hp(3);
    opt.step = static_cast<std::int64_t>(take("adam.step").value(0, 0));
    for (const auto& t : cp.params.tensors) {
      opt.first_moment.push_back(take("adam.m/" + t.name).value);
      opt.second_moment.push_back(take("adam.v/" + t.name).value);
    }
    cp.optimizer = std::move(opt);
  }
  return cp;
}

}  // namespace poleimg
