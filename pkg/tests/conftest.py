from hypothesis import settings

settings.register_profile("artifact", deadline=None, max_examples=50)
settings.load_profile("artifact")
