"""Package for target images and paired datasets."""
