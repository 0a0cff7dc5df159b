#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fdf/corpus.hpp"
#include "fdf/enrollment.hpp"
#include "fdf/evalkit.hpp"
#include "fdf/fdfnet.hpp"

namespace fdf {

using ImageCorpus = std::map<std::string, std::vector<ImageGrid>>;
using FeatureCorpus = SubjectSamples<Eigen::VectorXd>;

/// First `gallery_size` samples of each subject form the gallery, the rest the probes.
struct GalleryProbeSplit {
  SubjectSamples<ImageGrid> gallery;
  SubjectSamples<ImageGrid> probes;
};

GalleryProbeSplit split_gallery_probe(const ImageCorpus& corpus, std::size_t gallery_size);

/// Subject labels follow the (sorted) key order of `gallery`. With `augmentation`,
/// each image also contributes its augmented copies.
std::vector<LabeledImage> make_training_set(const SubjectSamples<ImageGrid>& gallery,
                                            const std::optional<AugmentationSpec>& augmentation = {});

FeatureCorpus extract_corpus_features(const FdfModel& model, const SubjectSamples<ImageGrid>& images);

struct BiohashEvaluation {
  ProtocolResult protocol;
  MetricsReport metrics;
};

/// Enrolls the gallery means under freshly issued keys and scores every probe against every template.
BiohashEvaluation evaluate_biohash(const FeatureCorpus& gallery, const FeatureCorpus& probes,
                                   int bit_length, const KeyIssuer& issuer, Modality modality,
                                   EnrollmentStore& store);

/// Sample-wise fusion across modality streams sharing subjects and sample counts.
FeatureCorpus fuse_corpora(const std::vector<FeatureCorpus>& streams);

} // namespace fdf
