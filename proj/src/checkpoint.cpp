#include "dqmil/checkpoint.hpp"

#include "dqmil/binary_io.hpp"
#include "dqmil/errors.hpp"

namespace dqmil {

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const DQModel<T>& model)
{
    ByteWriter w;
    w.raw("DQML");
    w.u16(kCheckpointVersion);
    const std::string config = config_to_json(model.config());
    w.u32(static_cast<std::uint32_t>(config.size()));
    w.raw(config);
    w.u32(static_cast<std::uint32_t>(model.params().size()));
    for (const auto& p : model.params()) {
        w.u32(static_cast<std::uint32_t>(p.name.size()));
        w.raw(p.name);
        w.u32(static_cast<std::uint32_t>(p.value.rank()));
        for (std::size_t extent : p.value.shape()) {
            w.u32(static_cast<std::uint32_t>(extent));
        }
        for (T v : p.value.values()) {
            w.f32(static_cast<float>(v));
        }
    }
    return w.take();
}

template <typename T>
DQModel<T> deserialize_checkpoint(std::span<const std::uint8_t> bytes)
{
    ByteReader r(bytes, "checkpoint");
    r.expect_magic("DQML");
    const std::uint16_t version = r.u16();
    if (version != kCheckpointVersion) {
        throw VersionError("checkpoint: unsupported format version " + std::to_string(version) + " (this build reads " +
                           std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint32_t config_len = r.u32();
    DQModel<T> model(config_from_json(r.string(config_len)), 0);

    const std::uint32_t count = r.u32();
    if (count != model.params().size()) {
        r.fail("tensor count " + std::to_string(count) + " does not match the config's " +
               std::to_string(model.params().size()));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.string(r.u32());
        auto& p = model.params()[i];
        if (name != p.name) {
            r.fail("tensor '" + name + "' found where '" + p.name + "' was expected");
        }
        const std::uint32_t rank = r.u32();
        Shape shape(rank);
        for (auto& extent : shape) {
            extent = r.u32();
        }
        if (shape != p.value.shape()) {
            r.fail("tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                   shape_string(p.value.shape()));
        }
        for (auto& v : p.value.values()) {
            v = static_cast<T>(r.f32());
        }
    }
    if (r.remaining() != 0) {
        r.fail("trailing bytes");
    }
    return model;
}

template <typename T>
void save_checkpoint(const DQModel<T>& model, const std::filesystem::path& path)
{
    write_file(path, serialize_checkpoint(model));
}

template <typename T>
DQModel<T> load_checkpoint(const std::filesystem::path& path)
{
    return deserialize_checkpoint<T>(read_file(path));
}

template std::vector<std::uint8_t> serialize_checkpoint<float>(const DQModel<float>&);
template std::vector<std::uint8_t> serialize_checkpoint<double>(const DQModel<double>&);
template DQModel<float> deserialize_checkpoint<float>(std::span<const std::uint8_t>);
template DQModel<double> deserialize_checkpoint<double>(std::span<const std::uint8_t>);
template void save_checkpoint<float>(const DQModel<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(const DQModel<double>&, const std::filesystem::path&);
template DQModel<float> load_checkpoint<float>(const std::filesystem::path&);
template DQModel<double> load_checkpoint<double>(const std::filesystem::path&);

} // namespace dqmil
