// Compiles the templates once for each supported scalar type.
#include "cellinr.hpp"

namespace cellinr {

namespace nn {
template class Matrix<float>;
template class Matrix<double>;
template class Tape<float>;
template class Tape<double>;
template struct MlpParams<float>;
template struct MlpParams<double>;
template struct Networks<float>;
template struct Networks<double>;
template Networks<float> make_networks<float>(const NetConfig&, std::uint64_t);
template Networks<double> make_networks<double>(const NetConfig&, std::uint64_t);
template Matrix<float> mlp_forward<float>(const MlpParams<float>&, const Matrix<float>&, const Matrix<float>*);
template Matrix<double> mlp_forward<double>(const MlpParams<double>&, const Matrix<double>&, const Matrix<double>*);
}  // namespace nn

template Prediction predict_blind<float>(const SampleSet&, const nn::Networks<float>&);
template Prediction predict_blind<double>(const SampleSet&, const nn::Networks<double>&);
template Volume3D render_volume<float>(const nn::MlpParams<float>&, int, const Dims&, const Dims&, const Spacing&,
                                       std::size_t);
template Volume3D render_volume<double>(const nn::MlpParams<double>&, int, const Dims&, const Dims&, const Spacing&,
                                        std::size_t);
template SampleSet build_sample_set<float>(const Vec3&, const Dims&, const SamplerParams&, const nn::Networks<float>&,
                                           Rng&);
template SampleSet build_sample_set<double>(const Vec3&, const Dims&, const SamplerParams&, const nn::Networks<double>&,
                                            Rng&);

}  // namespace cellinr
