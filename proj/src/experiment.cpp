#include "fdf/experiment.hpp"

#include "fdf/random.hpp"

namespace fdf {

GalleryProbeSplit split_gallery_probe(const ImageCorpus& corpus, std::size_t gallery_size) {
  if (gallery_size < 1) throw ProtocolError("split: gallery size must be positive");
  GalleryProbeSplit split;
  for (const auto& [subject, images] : corpus) {
    if (images.size() <= gallery_size)
      throw ProtocolError("split: subject '" + subject + "' has " + std::to_string(images.size()) +
                          " samples, need more than " + std::to_string(gallery_size));
    split.gallery[subject].assign(images.begin(), images.begin() + static_cast<std::ptrdiff_t>(gallery_size));
    split.probes[subject].assign(images.begin() + static_cast<std::ptrdiff_t>(gallery_size), images.end());
  }
  return split;
}

std::vector<LabeledImage> make_training_set(const SubjectSamples<ImageGrid>& gallery,
                                            const std::optional<AugmentationSpec>& augmentation) {
  std::vector<LabeledImage> set;
  int label = 0;
  std::uint64_t image_index = 0;
  for (const auto& [subject, images] : gallery) {
    for (const ImageGrid& image : images) {
      set.push_back({image, label});
      if (augmentation) {
        AugmentationSpec spec = *augmentation;
        spec.seed = derive_seed(augmentation->seed, image_index);
        for (ImageGrid& a : augment(image, spec)) set.push_back({std::move(a), label});
      }
      ++image_index;
    }
    ++label;
  }
  return set;
}

FeatureCorpus extract_corpus_features(const FdfModel& model, const SubjectSamples<ImageGrid>& images) {
  FeatureCorpus out;
  for (const auto& [subject, samples] : images) out[subject] = extract_features(model, samples);
  return out;
}

BiohashEvaluation evaluate_biohash(const FeatureCorpus& gallery, const FeatureCorpus& probes,
                                   int bit_length, const KeyIssuer& issuer, Modality modality,
                                   EnrollmentStore& store) {
  ProtocolPipeline<Eigen::VectorXd> pipeline;
  pipeline.enroll = [&](const std::string& subject, std::span<const Eigen::VectorXd> samples) {
    const int version = store.latest_key_version(subject, modality) + 1;
    enroll_features(store, subject, samples, issuer.issue(subject, modality, version, bit_length), modality);
  };
  pipeline.score = [&](const Eigen::VectorXd& probe, const std::string& subject) {
    return verify_features(store, probe, subject, modality, 0.0).score;
  };
  BiohashEvaluation result;
  result.protocol = run_protocol(gallery, probes, pipeline);
  result.metrics = compute_metrics(result.protocol);
  return result;
}

FeatureCorpus fuse_corpora(const std::vector<FeatureCorpus>& streams) {
  if (streams.size() < 2) throw DataError("fusion: need at least two modality streams");
  FeatureCorpus fused;
  for (const auto& [subject, samples] : streams.front()) {
    for (std::size_t k = 0; k < samples.size(); ++k) {
      std::vector<Eigen::VectorXd> parts;
      for (const FeatureCorpus& stream : streams) {
        const auto it = stream.find(subject);
        if (it == stream.end() || it->second.size() != samples.size())
          throw DataError("fusion: modality streams disagree on subject '" + subject + "'");
        parts.push_back(it->second[k]);
      }
      fused[subject].push_back(fuse_features(parts));
    }
  }
  return fused;
}

} // namespace fdf
